#include "transfusion/checkpoint.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

namespace transfusion {

namespace {

constexpr const char* kAdamM = "adam.m.";
constexpr const char* kAdamV = "adam.v.";
constexpr const char* kAdamT = "adam.t";

}  // namespace

std::string encode_checkpoint(const TransFusionModel& model, const AdamState* adam, io::DType dtype) {
  const auto named = model.named_parameters();
  std::map<std::string, Tensor> records;
  for (const auto& [name, t] : named) records.emplace(name, t);
  if (adam) {
    if (adam->m.size() != named.size() || adam->v.size() != named.size()) {
      throw ShapeError("optimizer state does not match the model parameter list");
    }
    for (std::size_t i = 0; i < named.size(); ++i) {
      const auto& [name, t] = named[i];
      records.emplace(kAdamM + name, Tensor::from(t.shape(), adam->m[i]));
      records.emplace(kAdamV + name, Tensor::from(t.shape(), adam->v[i]));
    }
    records.emplace(kAdamT, Tensor::scalar(static_cast<double>(adam->t)));
  }

  std::ostringstream os(std::ios::binary);
  os.write(kCheckpointMagic, 4);
  io::write_u32(os, kCheckpointVersion);
  const std::string cfg = nlohmann::json(model.cfg).dump();
  io::write_u32(os, static_cast<std::uint32_t>(cfg.size()));
  io::write_bytes(os, cfg);
  io::write_u32(os, static_cast<std::uint32_t>(records.size()));
  for (const auto& [name, t] : records) {
    io::write_u32(os, static_cast<std::uint32_t>(name.size()));
    io::write_bytes(os, name);
    // The step counter stays exact regardless of the payload precision.
    io::write_tensor(os, t, name == kAdamT ? io::DType::f64 : dtype);
  }
  return os.str();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  const std::string magic = io::read_bytes(is, 4, "checkpoint magic");
  if (magic != std::string(kCheckpointMagic, 4)) throw MagicError("not a checkpoint (bad magic)");
  const auto version = io::read_u32(is, "checkpoint version");
  if (version != kCheckpointVersion) {
    throw VersionError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto cfg_len = io::read_u32(is, "config length");
  const std::string cfg_text = io::read_bytes(is, cfg_len, "config");
  ModelConfig cfg;
  try {
    cfg = nlohmann::json::parse(cfg_text).get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  }

  const auto count = io::read_u32(is, "record count");
  std::map<std::string, Tensor> records;
  std::string prev;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = io::read_u32(is, "record name length");
    std::string name = io::read_bytes(is, len, "record name");
    if (i > 0 && !(prev < name)) throw FormatError("checkpoint records out of order at '" + name + "'");
    records.emplace(name, io::read_tensor(is));
    prev = std::move(name);
  }
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after the last checkpoint record");

  Checkpoint ck{build(cfg), std::nullopt};
  const auto named = ck.model.named_parameters();
  std::size_t used = 0;
  for (const auto& [name, t] : named) {
    auto it = records.find(name);
    if (it == records.end()) throw FormatError("checkpoint lacks parameter '" + name + "'");
    if (it->second.shape() != t.shape()) {
      throw FormatError("parameter '" + name + "' has shape " + shape_str(it->second.shape()) + ", expected " +
                        shape_str(t.shape()));
    }
    auto src = it->second.data();
    auto dst = Tensor(t).mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
    ++used;
  }

  if (records.count(kAdamT)) {
    AdamState st;
    st.t = static_cast<std::uint64_t>(records.at(kAdamT).item());
    ++used;
    for (const auto& [name, t] : named) {
      auto m = records.find(kAdamM + name);
      auto v = records.find(kAdamV + name);
      if (m == records.end() || v == records.end() || m->second.shape() != t.shape() || v->second.shape() != t.shape()) {
        throw FormatError("incomplete optimizer state for '" + name + "'");
      }
      st.m.push_back(m->second.to_vector());
      st.v.push_back(v->second.to_vector());
      used += 2;
    }
    ck.adam = std::move(st);
  }
  if (used != records.size()) throw FormatError("checkpoint has records that do not belong to the model");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const TransFusionModel& model, const AdamState* adam,
                     io::DType dtype) {
  io::write_file_atomic(path, encode_checkpoint(model, adam, dtype));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_checkpoint(buf.str());
}

}  // namespace transfusion
