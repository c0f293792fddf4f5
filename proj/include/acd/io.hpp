#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "acd/error.hpp"
#include "acd/model.hpp"
#include "acd/tensor.hpp"

namespace acd {

namespace fs = std::filesystem;

inline constexpr int kModelFormatVersion = 1;

namespace detail {

inline std::vector<char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

inline std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big)
    v = ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
  return v;
}

inline void append_f32le(std::string& out, float f) {
  const auto v = to_little(std::bit_cast<std::uint32_t>(f));
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

inline float read_f32le(const char* p) {
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  return std::bit_cast<float>(to_little(v));
}

inline void append_u32le(std::string& out, std::uint32_t v) {
  v = to_little(v);
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

inline std::uint32_t read_u32le(const char* p) {
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  return to_little(v);
}

inline std::uint32_t read_u32be(const unsigned char* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
         std::uint32_t(p[3]);
}

inline Shape shape_from_json(const nlohmann::json& j, const std::string& what) {
  if (!j.is_array() || j.empty()) throw ModelFormatError(what + ": shape must be a non-empty array");
  Shape s;
  for (const auto& e : j) {
    if (!e.is_number_integer() || e.get<long long>() <= 0)
      throw ModelFormatError(what + ": shape extents must be positive integers");
    s.push_back(e.get<std::size_t>());
  }
  return s;
}

inline Extent2 extent2_from_json(const nlohmann::json& layer, const char* key, Extent2 fallback) {
  if (!layer.contains(key)) return fallback;
  const auto& v = layer.at(key);
  if (v.is_number_integer()) return {v.get<std::size_t>(), v.get<std::size_t>()};
  if (!v.is_array() || v.size() != 2) throw ModelFormatError(std::string(key) + " must be [h, w]");
  return {v[0].get<std::size_t>(), v[1].get<std::size_t>()};
}

inline Tensor read_blob_tensor(const nlohmann::json& ref, const std::vector<char>& blob,
                               const std::string& what) {
  if (!ref.is_object() || !ref.contains("offset") || !ref.contains("shape"))
    throw ModelFormatError(what + ": expected {offset, shape}");
  if (!ref.at("offset").is_number_integer() || ref.at("offset").get<long long>() < 0)
    throw OffsetError(what + ": offset must be a non-negative integer");
  const auto offset = ref.at("offset").get<std::size_t>();
  const auto shape = shape_from_json(ref.at("shape"), what);
  if (offset % 4 != 0) throw OffsetError(what + ": offset " + std::to_string(offset) + " is not 4-byte aligned");
  if (offset >= blob.size() && shape_numel(shape) > 0)
    throw OffsetError(what + ": offset " + std::to_string(offset) + " beyond weight blob of " +
                      std::to_string(blob.size()) + " bytes");
  const std::size_t bytes = 4 * shape_numel(shape);
  if (offset + bytes > blob.size())
    throw TruncatedBlobError(what + ": needs bytes [" + std::to_string(offset) + ", " +
                             std::to_string(offset + bytes) + ") but weight blob has " +
                             std::to_string(blob.size()));
  std::vector<float> data(shape_numel(shape));
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = read_f32le(blob.data() + offset + 4 * i);
  return Tensor(shape, std::move(data));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Portable model format: <dir>/model.json + <dir>/weights.bin

inline void save_model(const Model& model, const fs::path& dir) {
  model.validate();
  using nlohmann::json;
  std::string blob;
  auto put = [&blob](const Tensor& t) {
    json ref{{"offset", blob.size()}, {"shape", t.shape()}};
    for (float v : t.values()) detail::append_f32le(blob, v);
    return ref;
  };
  json layers = json::array();
  for (const auto& l : model.layers) {
    json j{{"kind", to_string(l.kind)}};
    switch (l.kind) {
      case LayerKind::linear:
        j["weight"] = put(l.weight);
        j["bias"] = put(l.bias);
        break;
      case LayerKind::conv2d:
        j["weight"] = put(l.weight);
        j["bias"] = put(l.bias);
        j["stride"] = {l.stride.h, l.stride.w};
        j["padding"] = {l.padding.h, l.padding.w};
        break;
      case LayerKind::maxpool2d:
        j["kernel"] = {l.kernel.h, l.kernel.w};
        j["stride"] = {l.stride.h, l.stride.w};
        break;
      case LayerKind::dropout: j["p"] = l.dropout_p; break;
      case LayerKind::embedding: j["weight"] = put(l.weight); break;
      case LayerKind::relu:
      case LayerKind::flatten: break;
    }
    layers.push_back(std::move(j));
  }
  json manifest{{"format_version", kModelFormatVersion},
                {"input_shape", model.input_shape},
                {"class_labels", model.class_labels},
                {"layers", std::move(layers)}};
  if (!model.vocab.empty()) manifest["vocab"] = model.vocab;
  fs::create_directories(dir);
  detail::write_bytes(dir / "model.json", manifest.dump(2) + "\n");
  detail::write_bytes(dir / "weights.bin", blob);
}

inline Model load_model(const fs::path& dir) {
  using nlohmann::json;
  const auto text = detail::read_bytes(dir / "model.json");
  json manifest;
  try {
    manifest = json::parse(text.begin(), text.end());
  } catch (const json::exception& e) {
    throw ModelFormatError((dir / "model.json").string() + ": " + e.what());
  }
  const auto blob = detail::read_bytes(dir / "weights.bin");
  try {
    const auto version = manifest.at("format_version").get<int>();
    if (version != kModelFormatVersion)
      throw VersionError("model format version " + std::to_string(version) +
                         " is not supported (expected " + std::to_string(kModelFormatVersion) + ")");
    Model model;
    model.input_shape = detail::shape_from_json(manifest.at("input_shape"), "input_shape");
    if (manifest.contains("class_labels"))
      model.class_labels = manifest.at("class_labels").get<std::vector<std::string>>();
    if (manifest.contains("vocab")) model.vocab = manifest.at("vocab").get<std::vector<std::string>>();
    std::size_t index = 0;
    for (const auto& j : manifest.at("layers")) {
      const auto name = j.at("kind").get<std::string>();
      const auto kind = layer_kind_from_string(name);
      if (!kind) throw UnsupportedLayerError("layer " + std::to_string(index) + ": unknown kind '" + name + "'");
      const auto where = "layer " + std::to_string(index);
      LayerSpec l;
      switch (*kind) {
        case LayerKind::linear:
          l = LayerSpec::linear(detail::read_blob_tensor(j.at("weight"), blob, where + " weight"),
                                detail::read_blob_tensor(j.at("bias"), blob, where + " bias"));
          break;
        case LayerKind::conv2d:
          l = LayerSpec::conv2d(detail::read_blob_tensor(j.at("weight"), blob, where + " weight"),
                                detail::read_blob_tensor(j.at("bias"), blob, where + " bias"),
                                detail::extent2_from_json(j, "stride", {1, 1}),
                                detail::extent2_from_json(j, "padding", {0, 0}));
          break;
        case LayerKind::maxpool2d: {
          const auto kernel = detail::extent2_from_json(j, "kernel", {2, 2});
          l = LayerSpec::maxpool2d(kernel, detail::extent2_from_json(j, "stride", kernel));
          break;
        }
        case LayerKind::relu: l = LayerSpec::relu(); break;
        case LayerKind::dropout: l = LayerSpec::dropout(j.value("p", 0.0f)); break;
        case LayerKind::flatten: l = LayerSpec::flatten(); break;
        case LayerKind::embedding:
          l = LayerSpec::embedding(detail::read_blob_tensor(j.at("weight"), blob, where + " weight"));
          break;
      }
      model.layers.push_back(std::move(l));
      ++index;
    }
    model.validate();
    return model;
  } catch (const json::exception& e) {
    throw ModelFormatError((dir / "model.json").string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// IDX (big-endian) arrays, as used by MNIST.

struct IdxArray {
  Shape shape;
  std::vector<float> values;
  bool unsigned_bytes = false;
};

inline IdxArray read_idx(const fs::path& path) {
  const auto bytes = detail::read_bytes(path);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 4 || p[0] != 0 || p[1] != 0) throw DataError(path.string() + ": not an IDX file");
  const unsigned type = p[2], rank = p[3];
  std::size_t pos = 4 + 4 * rank;
  if (rank == 0 || bytes.size() < pos) throw DataError(path.string() + ": truncated IDX header");
  IdxArray a;
  for (unsigned i = 0; i < rank; ++i) a.shape.push_back(detail::read_u32be(p + 4 + 4 * i));
  const std::size_t n = shape_numel(a.shape);
  const std::size_t width = type == 0x08 || type == 0x09 ? 1 : type == 0x0D ? 4 : 0;
  if (width == 0) throw DataError(path.string() + ": unsupported IDX element type");
  if (bytes.size() < pos + n * width) throw DataError(path.string() + ": truncated IDX payload");
  a.values.resize(n);
  a.unsigned_bytes = type == 0x08;
  for (std::size_t i = 0; i < n; ++i, pos += width) {
    if (type == 0x08)
      a.values[i] = p[pos];
    else if (type == 0x09)
      a.values[i] = static_cast<signed char>(p[pos]);
    else
      a.values[i] = std::bit_cast<float>(detail::read_u32be(p + pos));
  }
  return a;
}

inline void write_idx_ubyte(const fs::path& path, const Shape& shape, const std::vector<std::uint8_t>& v) {
  std::string out{'\0', '\0', '\x08', char(shape.size())};
  for (auto e : shape)
    for (int s = 24; s >= 0; s -= 8) out.push_back(char((e >> s) & 0xFF));
  out.append(reinterpret_cast<const char*>(v.data()), v.size());
  detail::write_bytes(path, out);
}

struct Sample {
  Tensor input;
  std::size_t label = 0;
};

/// MNIST image/label IDX pair; pixels scaled to [0, 1], images 1 x H x W.
inline std::vector<Sample> load_mnist(const fs::path& images, const fs::path& labels,
                                      std::size_t limit = SIZE_MAX) {
  const auto im = read_idx(images);
  const auto lb = read_idx(labels);
  if (im.shape.size() != 3 || lb.shape.size() != 1 || im.shape[0] != lb.shape[0])
    throw DataError("MNIST image/label files disagree: " + shape_str(im.shape) + " vs " +
                    shape_str(lb.shape));
  const std::size_t n = std::min(limit, im.shape[0]), h = im.shape[1], w = im.shape[2];
  const float scale = im.unsigned_bytes ? 1.0f / 255.0f : 1.0f;
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<float> px(im.values.begin() + i * h * w, im.values.begin() + (i + 1) * h * w);
    for (auto& v : px) v *= scale;
    out.push_back({Tensor({1, h, w}, std::move(px)), std::size_t(lb.values[i])});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Raw float container: "ACDF", u32 version, u32 rank, u32 extents, f32 data,
// all little-endian.

inline void write_raw(const fs::path& path, const Tensor& t) {
  std::string out = "ACDF";
  detail::append_u32le(out, 1);
  detail::append_u32le(out, std::uint32_t(t.rank()));
  for (auto e : t.shape()) detail::append_u32le(out, std::uint32_t(e));
  for (float v : t.values()) detail::append_f32le(out, v);
  detail::write_bytes(path, out);
}

inline bool is_raw_container(const std::vector<char>& bytes) {
  return bytes.size() >= 4 && std::memcmp(bytes.data(), "ACDF", 4) == 0;
}

inline Tensor read_raw(const fs::path& path) {
  const auto bytes = detail::read_bytes(path);
  if (!is_raw_container(bytes) || bytes.size() < 12) throw DataError(path.string() + ": not an ACDF container");
  if (detail::read_u32le(bytes.data() + 4) != 1) throw DataError(path.string() + ": unsupported ACDF version");
  const std::size_t rank = detail::read_u32le(bytes.data() + 8);
  std::size_t pos = 12 + 4 * rank;
  if (bytes.size() < pos) throw DataError(path.string() + ": truncated ACDF header");
  Shape shape;
  for (std::size_t i = 0; i < rank; ++i) shape.push_back(detail::read_u32le(bytes.data() + 12 + 4 * i));
  const std::size_t n = shape_numel(shape);
  if (bytes.size() != pos + 4 * n) throw DataError(path.string() + ": ACDF payload size mismatch");
  std::vector<float> v(n);
  for (std::size_t i = 0; i < n; ++i, pos += 4) v[i] = detail::read_f32le(bytes.data() + pos);
  return Tensor(std::move(shape), std::move(v));
}

/// Loads one image as C x H x W: an ACDF container, or entry `index` of an
/// IDX stack (a rank-2 IDX file is a single image). Byte images are scaled
/// to [0, 1].
inline Tensor load_image(const fs::path& path, std::size_t index = 0) {
  const auto head = detail::read_bytes(path);
  if (is_raw_container(head)) {
    auto t = read_raw(path);
    if (t.rank() == 2) return t.reshaped({1, t.extent(0), t.extent(1)});
    return t;
  }
  const auto a = read_idx(path);
  const float scale = a.unsigned_bytes ? 1.0f / 255.0f : 1.0f;
  std::size_t h, w, offset = 0;
  if (a.shape.size() == 2) {
    h = a.shape[0];
    w = a.shape[1];
  } else if (a.shape.size() == 3) {
    if (index >= a.shape[0])
      throw DataError(path.string() + ": image index " + std::to_string(index) + " out of range");
    h = a.shape[1];
    w = a.shape[2];
    offset = index * h * w;
  } else {
    throw DataError(path.string() + ": expected a rank-2 or rank-3 IDX image file");
  }
  std::vector<float> px(a.values.begin() + offset, a.values.begin() + offset + h * w);
  for (auto& v : px) v *= scale;
  return Tensor({1, h, w}, std::move(px));
}

// ---------------------------------------------------------------------------
// Token corpus: JSON lines {"tokens": [...], "label": int}.

struct TextRecord {
  std::vector<std::string> tokens;
  std::size_t label = 0;
};

inline std::vector<TextRecord> read_corpus(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<TextRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      TextRecord r{j.at("tokens").get<std::vector<std::string>>(), j.at("label").get<std::size_t>()};
      if (r.tokens.empty()) throw DataError("empty token list");
      out.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline constexpr std::size_t kPadToken = 0;
inline constexpr std::size_t kUnknownToken = 1;

/// Vocabulary in first-seen order after the <pad> and <unk> entries.
inline std::vector<std::string> build_vocab(const std::vector<TextRecord>& corpus) {
  std::vector<std::string> vocab{"<pad>", "<unk>"};
  std::set<std::string> seen(vocab.begin(), vocab.end());
  for (const auto& r : corpus)
    for (const auto& t : r.tokens)
      if (seen.insert(t).second) vocab.push_back(t);
  return vocab;
}

/// Token ids padded with <pad> to the model's input length.
inline Tensor encode_tokens(const Model& model, const std::vector<std::string>& tokens) {
  if (model.vocab.empty()) throw DataError("model has no vocabulary; it is not a text model");
  if (model.input_shape.size() != 1) throw ShapeError("text model input must be rank 1");
  const std::size_t length = model.input_shape[0];
  if (tokens.empty() || tokens.size() > length)
    throw ShapeError("token count " + std::to_string(tokens.size()) + " not in [1, " +
                     std::to_string(length) + "]");
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < model.vocab.size(); ++i) index.emplace(model.vocab[i], i);
  Tensor ids({length}, float(kPadToken));
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto it = index.find(tokens[t]);
    ids[t] = float(it == index.end() ? kUnknownToken : it->second);
  }
  return ids;
}

}  // namespace acd
