#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "hpdssm/error.hpp"
#include "hpdssm/model_config.hpp"
#include "hpdssm/tensor.hpp"

namespace hpdssm {

inline constexpr char kCheckpointMagic[4] = {'S', 'S', 'M', 'W'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::size_t kDataAlignment = 64;

inline constexpr const char* kHpdTargetKey = "hpd.target";
inline constexpr const char* kHpdCimName = "hpd.w_cim";
inline constexpr const char* kHpdDigitalName = "hpd.v";

/// Named tensors plus architecture and free-form string metadata. Tensors
/// are held in 64-bit; the on-disk payload is 32-bit.
struct Checkpoint {
  ModelConfig config;
  std::map<std::string, Tensor> tensors;
  std::map<std::string, std::string> metadata;

  const Tensor& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
      throw FormatError(FormatErrc::schema, name, "tensor not present in checkpoint");
    }
    return it->second;
  }

  bool contains(const std::string& name) const { return tensors.count(name) != 0; }

  std::optional<std::string> meta(const std::string& key) const {
    auto it = metadata.find(key);
    if (it == metadata.end()) return std::nullopt;
    return it->second;
  }

  /// Name of the tensor replaced by an HPD factorization, if any.
  std::optional<std::string> hpd_target() const { return meta(kHpdTargetKey); }

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline std::string layer_tensor(std::size_t layer, const char* suffix) {
  return "layers." + std::to_string(layer) + "." + suffix;
}

/// Required tensor names and shapes for a plain (non-HPD) checkpoint.
inline std::vector<std::pair<std::string, Dims>> base_schema(const ModelConfig& c) {
  const std::size_t di = c.d_inner();
  std::vector<std::pair<std::string, Dims>> schema;
  for (std::size_t i = 0; i < c.n_layers; ++i) {
    schema.emplace_back(layer_tensor(i, "in_proj.weight"), Dims{2 * di, c.d_model});
    schema.emplace_back(layer_tensor(i, "conv1d.weight"), Dims{di, c.d_conv});
    schema.emplace_back(layer_tensor(i, "conv1d.bias"), Dims{di});
    schema.emplace_back(layer_tensor(i, "x_proj.weight"), Dims{c.dt_rank + 2 * c.d_state, di});
    schema.emplace_back(layer_tensor(i, "dt_proj.weight"), Dims{di, c.dt_rank});
    schema.emplace_back(layer_tensor(i, "dt_proj.bias"), Dims{di});
    schema.emplace_back(layer_tensor(i, "A_log"), Dims{di, c.d_state});
    schema.emplace_back(layer_tensor(i, "D"), Dims{di});
    schema.emplace_back(layer_tensor(i, "out_proj.weight"), Dims{c.d_model, di});
    schema.emplace_back(layer_tensor(i, "norm.weight"), Dims{c.d_model});
  }
  schema.emplace_back("embedding.weight", Dims{c.vocab_size, c.d_model});
  schema.emplace_back("norm_f.weight", Dims{c.d_model});
  schema.emplace_back("lm_head.weight", Dims{c.vocab_size, c.d_model});
  return schema;
}

/// Checks the tensor set and shapes against the schema implied by the
/// config and the "hpd.target" metadata flag.
inline void validate_checkpoint(const Checkpoint& ckpt) {
  try {
    ckpt.config.validate();
  } catch (const ConfigError& e) {
    throw FormatError(FormatErrc::schema, "", e.what());
  }
  auto schema = base_schema(ckpt.config);

  if (auto target = ckpt.hpd_target()) {
    auto it = std::find_if(schema.begin(), schema.end(),
                           [&](const auto& entry) { return entry.first == *target; });
    if (it == schema.end() || it->second.size() != 2) {
      throw FormatError(FormatErrc::schema, *target, "hpd.target is not a 2-D schema projection");
    }
    const std::size_t out = it->second[0], in = it->second[1];
    schema.erase(it);
    auto cim = ckpt.tensors.find(kHpdCimName);
    std::size_t rank = 0;
    if (cim != ckpt.tensors.end() && cim->second.rank() == 2) rank = cim->second.cols();
    if (rank < 1 || rank > std::min(out, in)) {
      throw FormatError(FormatErrc::schema, kHpdCimName,
                        "missing or rank outside [1, " + std::to_string(std::min(out, in)) + "]");
    }
    schema.emplace_back(kHpdCimName, Dims{in, rank});
    schema.emplace_back(kHpdDigitalName, Dims{out, rank});
  }

  std::vector<std::string> missing, extra;
  for (const auto& [name, dims] : schema)
    if (!ckpt.contains(name)) missing.push_back(name);
  for (const auto& [name, tensor] : ckpt.tensors) {
    const bool known = std::any_of(schema.begin(), schema.end(),
                                   [&](const auto& entry) { return entry.first == name; });
    if (!known) extra.push_back(name);
  }
  if (!missing.empty() || !extra.empty()) {
    std::string detail, subject;
    if (!missing.empty()) {
      subject = missing.front();
      detail += "missing:";
      for (const auto& n : missing) detail += " " + n;
    }
    if (!extra.empty()) {
      if (subject.empty()) subject = extra.front();
      if (!detail.empty()) detail += "; ";
      detail += "unexpected:";
      for (const auto& n : extra) detail += " " + n;
    }
    throw FormatError(FormatErrc::schema, subject, detail);
  }

  for (const auto& [name, dims] : schema) {
    const Tensor& t = ckpt.at(name);
    if (t.dims() != dims) {
      throw FormatError(FormatErrc::schema, name,
                        "shape " + dims_to_string(t.dims()) + ", expected " + dims_to_string(dims));
    }
    if (!t.all_finite()) throw FormatError(FormatErrc::non_finite, name, "");
  }
}

/// Rounds every entry to the nearest 32-bit float (the storage precision).
inline Tensor round_to_storage(Tensor t) {
  for (double& v : t.data()) v = static_cast<double>(static_cast<float>(v));
  return t;
}

namespace io {

class ByteWriter {
public:
  template <typename T>
  void put(T value) {
    static_assert(std::is_integral_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i)
      bytes_.push_back(static_cast<std::uint8_t>(static_cast<std::uint64_t>(value) >> (8 * i)));
  }

  void put_f32(float value) {
    std::uint32_t bits;
    std::memcpy(&bits, &value, sizeof bits);
    put(bits);
  }

  void put_bytes(const void* data, std::size_t n) {
    auto p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }

  void pad_to(std::size_t alignment) {
    while (bytes_.size() % alignment != 0) bytes_.push_back(0);
  }

  std::size_t size() const { return bytes_.size(); }
  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
public:
  ByteReader(const std::vector<std::uint8_t>& bytes, std::string what)
      : bytes_(bytes), what_(std::move(what)) {}

  template <typename T>
  T get(const std::string& subject = "") {
    static_assert(std::is_integral_v<T>);
    need(sizeof(T), subject);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  std::string get_string(std::size_t n, const std::string& subject = "") {
    need(n, subject);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  void need(std::size_t n, const std::string& subject) const {
    if (n > bytes_.size() || pos_ > bytes_.size() - n) {
      throw FormatError(FormatErrc::truncated, subject,
                        what_ + " ends at byte " + std::to_string(bytes_.size()));
    }
  }

  std::size_t position() const { return pos_; }
  std::size_t size() const { return bytes_.size(); }

private:
  const std::vector<std::uint8_t>& bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrc::io, "", "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatErrc::io, "", "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(FormatErrc::io, "", "write failed for " + path.string());
}

inline float f32_from_bits(std::uint32_t bits) {
  float f;
  std::memcpy(&f, &bits, sizeof f);
  return f;
}

}  // namespace io

/// Serializes to the SSMW v1 layout.
inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  validate_checkpoint(ckpt);

  nlohmann::json blob = config_to_json(ckpt.config);
  blob["metadata"] = nlohmann::json::object();
  for (const auto& [k, v] : ckpt.metadata) blob["metadata"][k] = v;
  const std::string config_text = blob.dump();

  io::ByteWriter w;
  w.put_bytes(kCheckpointMagic, 4);
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint32_t>(config_text.size()));
  w.put_bytes(config_text.data(), config_text.size());
  w.put(static_cast<std::uint32_t>(ckpt.tensors.size()));

  std::uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.size() > 0xFFFF) throw FormatError(FormatErrc::validation, name, "name too long");
    w.put(static_cast<std::uint16_t>(name.size()));
    w.put_bytes(name.data(), name.size());
    w.put(std::uint8_t{0});
    w.put(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.dims()) w.put(static_cast<std::uint64_t>(d));
    const std::uint64_t length = 4 * static_cast<std::uint64_t>(t.size());
    w.put(offset);
    w.put(length);
    offset += length;
  }
  w.pad_to(kDataAlignment);

  for (const auto& [name, t] : ckpt.tensors) {
    for (double v : t.data()) {
      const float f = static_cast<float>(v);
      if (!std::isfinite(f)) throw FormatError(FormatErrc::non_finite, name, "value overflows f32");
      w.put_f32(f);
    }
  }
  return w.bytes();
}

inline Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes, "checkpoint");
  const std::string magic = r.get_string(4);
  if (magic != std::string(kCheckpointMagic, 4)) {
    throw FormatError(FormatErrc::bad_magic, "", "expected SSMW, found \"" + magic + "\"");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError(FormatErrc::version_mismatch, "",
                      "file version " + std::to_string(version) + ", supported 1");
  }
  const auto config_len = r.get<std::uint32_t>();
  const std::string config_text = r.get_string(config_len, "config");

  Checkpoint ckpt;
  nlohmann::json blob;
  try {
    blob = nlohmann::json::parse(config_text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatErrc::validation, "config", e.what());
  }
  if (!blob.is_object()) throw FormatError(FormatErrc::validation, "config", "not a JSON object");
  for (const auto& [key, value] : blob.items()) {
    if (key == "metadata") continue;
    if (std::find(std::begin(kConfigFields), std::end(kConfigFields), key) ==
        std::end(kConfigFields)) {
      throw FormatError(FormatErrc::validation, "config", "unknown field \"" + key + "\"");
    }
  }
  auto field = [&](const char* name) -> std::size_t {
    if (!blob.contains(name) || !blob[name].is_number_unsigned()) {
      throw FormatError(FormatErrc::validation, "config",
                        std::string("field \"") + name + "\" missing or not a positive integer");
    }
    return blob[name].get<std::size_t>();
  };
  ckpt.config = {field("d_model"), field("n_layers"), field("d_state"),   field("d_conv"),
                 field("expand"),  field("dt_rank"),  field("vocab_size")};
  if (blob.contains("metadata")) {
    if (!blob["metadata"].is_object()) {
      throw FormatError(FormatErrc::validation, "config", "metadata is not an object");
    }
    for (const auto& [k, v] : blob["metadata"].items())
      ckpt.metadata[k] = v.is_string() ? v.get<std::string>() : v.dump();
  }

  struct Entry {
    std::string name;
    Dims dims;
    std::uint64_t offset, length;
  };
  const auto count = r.get<std::uint32_t>("tensor table");
  std::vector<Entry> entries;
  entries.reserve(std::min<std::uint32_t>(count, 1u << 16));
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint16_t>("tensor table");
    Entry e;
    e.name = r.get_string(name_len, "tensor table");
    const auto dtype = r.get<std::uint8_t>(e.name);
    if (dtype != 0) {
      throw FormatError(FormatErrc::unsupported_dtype, e.name,
                        "dtype code " + std::to_string(dtype));
    }
    const auto ndim = r.get<std::uint8_t>(e.name);
    if (ndim == 0) throw FormatError(FormatErrc::schema, e.name, "zero-dimensional tensor");
    for (std::uint8_t d = 0; d < ndim; ++d) e.dims.push_back(r.get<std::uint64_t>(e.name));
    e.offset = r.get<std::uint64_t>(e.name);
    e.length = r.get<std::uint64_t>(e.name);
    if (ckpt.contains(e.name) ||
        std::any_of(entries.begin(), entries.end(), [&](const Entry& x) { return x.name == e.name; })) {
      throw FormatError(FormatErrc::schema, e.name, "duplicate tensor name");
    }
    entries.push_back(std::move(e));
  }

  const std::size_t table_end = r.position();
  const std::size_t data_start = (table_end + kDataAlignment - 1) / kDataAlignment * kDataAlignment;
  for (const Entry& e : entries) {
    const std::uint64_t n = element_count(e.dims);
    if (e.length != 4 * n) {
      throw FormatError(FormatErrc::schema, e.name,
                        "byte length " + std::to_string(e.length) + " does not match dims " +
                            dims_to_string(e.dims));
    }
    if (data_start > bytes.size() || e.offset > bytes.size() - data_start ||
        e.length > bytes.size() - data_start - e.offset) {
      throw FormatError(FormatErrc::truncated, e.name, "payload extends past end of file");
    }
    std::vector<double> values(n);
    const std::uint8_t* p = bytes.data() + data_start + e.offset;
    for (std::uint64_t k = 0; k < n; ++k) {
      const std::uint32_t bits = static_cast<std::uint32_t>(p[4 * k]) |
                                 static_cast<std::uint32_t>(p[4 * k + 1]) << 8 |
                                 static_cast<std::uint32_t>(p[4 * k + 2]) << 16 |
                                 static_cast<std::uint32_t>(p[4 * k + 3]) << 24;
      const float f = io::f32_from_bits(bits);
      if (!std::isfinite(f)) {
        throw FormatError(FormatErrc::non_finite, e.name, "element " + std::to_string(k));
      }
      values[k] = static_cast<double>(f);
    }
    try {
      ckpt.tensors.emplace(e.name, Tensor(e.dims, std::move(values)));
    } catch (const ShapeError& err) {
      throw FormatError(FormatErrc::schema, e.name, err.what());
    }
  }

  validate_checkpoint(ckpt);
  return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  io::write_file(path, encode_checkpoint(ckpt));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path));
}

}  // namespace hpdssm
