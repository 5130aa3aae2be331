#pragma once

// Checkpoint container:
//   "EOCK" | u16 version | u64 manifest length | UTF-8 JSON manifest | tensor blobs
// The manifest holds {format_version, meta, tensors: [{name, dtype, shape, offset, nbytes}]};
// offsets are relative to the first blob byte. Blobs are little-endian.

#include <map>
#include <set>

#include "eovae/data/tile_io.hpp"
#include "eovae/nn/optim.hpp"

namespace eovae::nn {

inline constexpr char kCheckpointMagic[4] = {'E', 'O', 'C', 'K'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

template <typename T>
constexpr const char* dtype_name() {
  if constexpr (std::is_same_v<T, float>)
    return "float32";
  else
    return "float64";
}

struct StoredTensor {
  std::string dtype;
  Shape shape;
  std::string bytes;

  template <typename T>
  Tensor<T> as() const {
    Tensor<T> out(shape);
    const char* p = bytes.data();
    if (dtype == "float32") {
      for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<T>(std::bit_cast<float>(data::detail::get_le<std::uint32_t>(p + 4 * i)));
    } else {
      for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<T>(std::bit_cast<double>(data::detail::get_le<std::uint64_t>(p + 8 * i)));
    }
    return out;
  }
};

class CheckpointWriter {
 public:
  explicit CheckpointWriter(nlohmann::json meta = nlohmann::json::object()) : meta_(std::move(meta)) {}

  nlohmann::json& meta() { return meta_; }

  template <typename T>
  void add(const std::string& name, const Tensor<T>& t) {
    if (names_.count(name)) throw ConfigError("duplicate checkpoint tensor '" + name + "'");
    names_.insert(name);
    const std::size_t offset = blob_.size();
    for (T v : t.values()) {
      if constexpr (std::is_same_v<T, float>)
        data::detail::put_le<std::uint32_t>(blob_, std::bit_cast<std::uint32_t>(v));
      else
        data::detail::put_le<std::uint64_t>(blob_, std::bit_cast<std::uint64_t>(static_cast<double>(v)));
    }
    table_.push_back({{"name", name}, {"dtype", dtype_name<T>()}, {"shape", t.shape()}, {"offset", offset},
                      {"nbytes", blob_.size() - offset}});
  }

  template <typename T>
  void add_params(const ParamList<T>& params, const std::string& prefix = "") {
    for (const auto& p : params) add(prefix + p.name, p.var.value());
  }

  template <typename T>
  void add_optimizer(const AdamW<T>& opt) {
    meta_["optimizer"] = {{"step", opt.step_count()}};
    for (std::size_t i = 0; i < opt.params().size(); ++i) {
      add("adam.m." + opt.params()[i].name, opt.first_moments()[i]);
      add("adam.v." + opt.params()[i].name, opt.second_moments()[i]);
    }
  }

  std::string encode() const {
    const std::string manifest =
        nlohmann::json{{"format_version", kCheckpointVersion}, {"meta", meta_}, {"tensors", table_}}.dump();
    std::string out(kCheckpointMagic, 4);
    data::detail::put_le<std::uint16_t>(out, kCheckpointVersion);
    data::detail::put_le<std::uint64_t>(out, manifest.size());
    out += manifest;
    out += blob_;
    return out;
  }

  void write(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    data::write_file_atomic(path, encode());
  }

 private:
  nlohmann::json meta_;
  nlohmann::json table_ = nlohmann::json::array();
  std::set<std::string> names_;
  std::string blob_;
};

struct Checkpoint {
  nlohmann::json meta;
  std::map<std::string, StoredTensor> tensors;

  bool contains(const std::string& name) const { return tensors.count(name) > 0; }

  const StoredTensor& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ConfigError("checkpoint has no tensor '" + name + "'");
    return it->second;
  }

  /// Copies stored values into params, requiring every name and shape to match.
  template <typename T>
  void load_params(const ParamList<T>& params, const std::string& prefix = "") const {
    for (auto p : params) {
      const auto& st = at(prefix + p.name);
      if (st.shape != p.var.shape())
        throw ShapeError("checkpoint tensor '" + p.name + "' has shape " + shape_str(st.shape) + ", model expects " +
                         shape_str(p.var.shape()));
      p.var.mutable_value() = st.template as<T>();
    }
  }

  template <typename T>
  void load_optimizer(AdamW<T>& opt) const {
    if (!meta.contains("optimizer")) throw ConfigError("checkpoint carries no optimizer state");
    for (std::size_t i = 0; i < opt.params().size(); ++i) {
      opt.first_moments()[i] = at("adam.m." + opt.params()[i].name).template as<T>();
      opt.second_moments()[i] = at("adam.v." + opt.params()[i].name).template as<T>();
    }
    opt.set_step_count(meta["optimizer"].at("step").get<std::int64_t>());
  }
};

inline Checkpoint decode_checkpoint(const std::string& bytes, const std::string& origin = "<memory>") {
  constexpr std::size_t kPreamble = 14;
  if (bytes.size() < kPreamble || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw CorruptContainerError(origin + ": not a checkpoint (bad magic or truncated)");
  const auto version = data::detail::get_le<std::uint16_t>(bytes.data() + 4);
  if (version != kCheckpointVersion)
    throw CorruptContainerError(origin + ": unsupported checkpoint version " + std::to_string(version));
  const auto len = data::detail::get_le<std::uint64_t>(bytes.data() + 6);
  if (bytes.size() - kPreamble < len) throw CorruptContainerError(origin + ": truncated manifest");
  Checkpoint ck;
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin() + kPreamble, bytes.begin() + static_cast<std::ptrdiff_t>(kPreamble + len));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptContainerError(origin + ": bad manifest: " + e.what());
  }
  const std::size_t blob_start = kPreamble + len;
  try {
    ck.meta = manifest.at("meta");
    for (const auto& t : manifest.at("tensors")) {
      StoredTensor st;
      st.dtype = t.at("dtype").get<std::string>();
      st.shape = t.at("shape").get<Shape>();
      const auto offset = t.at("offset").get<std::size_t>();
      const auto nbytes = t.at("nbytes").get<std::size_t>();
      const std::size_t width = st.dtype == "float32" ? 4 : st.dtype == "float64" ? 8 : 0;
      if (width == 0) throw CorruptContainerError(origin + ": unknown dtype " + st.dtype);
      if (nbytes != width * static_cast<std::size_t>(shape_numel(st.shape)) ||
          blob_start + offset + nbytes > bytes.size())
        throw CorruptContainerError(origin + ": tensor '" + t.at("name").get<std::string>() + "' out of bounds");
      st.bytes = bytes.substr(blob_start + offset, nbytes);
      ck.tensors.emplace(t.at("name").get<std::string>(), std::move(st));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CorruptContainerError(origin + ": malformed manifest: " + e.what());
  }
  return ck;
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(data::detail::read_file(path), path.string());
}

}  // namespace eovae::nn
