#ifndef ADVPROBE_SERIALIZE_HPP
#define ADVPROBE_SERIALIZE_HPP

// Binary weight files and JSON architecture descriptors. The byte layout is
// documented in docs/formats.md.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "advprobe/error.hpp"
#include "advprobe/network.hpp"
#include "json.hpp"

namespace advprobe {

inline constexpr char kWeightMagic[4] = {'A', 'D', 'V', 'W'};
inline constexpr std::uint16_t kWeightFormatVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw IoError("weight file truncated at byte " + std::to_string(pos_));
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_weights(const ModelWeights& w) {
  detail::ByteWriter out;
  out.bytes(kWeightMagic, 4);
  out.u16(kWeightFormatVersion);
  out.u32(static_cast<std::uint32_t>(w.arch_tag.size()));
  out.bytes(w.arch_tag.data(), w.arch_tag.size());
  out.u32(static_cast<std::uint32_t>(w.layers.size()));
  for (const Tensor& t : w.layers) {
    out.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) out.u32(static_cast<std::uint32_t>(e));
    for (float v : t.values()) out.f32(v);
  }
  return out.take();
}

inline ModelWeights decode_weights(std::span<const std::uint8_t> bytes) {
  detail::ByteReader in(bytes);
  if (in.str(4) != std::string(kWeightMagic, 4)) throw IoError("not a weight file (bad magic)");
  const auto version = in.u16();
  if (version != kWeightFormatVersion) {
    throw IoError("unsupported weight format version " + std::to_string(version));
  }
  ModelWeights w;
  w.arch_tag = in.str(in.u32());
  const auto count = in.u32();
  for (std::uint32_t l = 0; l < count; ++l) {
    const auto rank = in.u32();
    Shape shape(rank);
    for (auto& e : shape) e = in.u32();
    Tensor t(shape);
    for (float& v : t.values()) v = in.f32();
    w.layers.push_back(std::move(t));
  }
  if (!in.done()) throw IoError("trailing bytes after weight payload");
  return w;
}

inline void save_weights(const std::filesystem::path& path, const ModelWeights& w) {
  detail::write_file(path, encode_weights(w));
}

inline ModelWeights load_weights(const std::filesystem::path& path) { return decode_weights(detail::read_file(path)); }

inline nlohmann::json arch_to_json(const ArchDescriptor& arch) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& spec : arch.layers) {
    layers.push_back(std::visit(
        overloaded{
            [](const layer::Conv& c) {
              return nlohmann::json{{"type", "conv"}, {"filters", c.filters}, {"kernel", c.kernel}, {"stride", c.stride}};
            },
            [](const layer::Relu&) { return nlohmann::json{{"type", "relu"}}; },
            [](const layer::MaxPool& p) { return nlohmann::json{{"type", "maxpool"}, {"window", p.window}}; },
            [](const layer::Dropout& d) { return nlohmann::json{{"type", "dropout"}, {"rate", d.rate}}; },
            [](const layer::Dense& d) { return nlohmann::json{{"type", "dense"}, {"units", d.units}}; },
        },
        spec));
  }
  return {{"name", arch.name},
          {"input_side", arch.input_side},
          {"channels", arch.channels},
          {"num_classes", arch.num_classes},
          {"layers", layers}};
}

inline ArchDescriptor arch_from_json(const nlohmann::json& j) {
  try {
    ArchDescriptor arch;
    arch.name = j.at("name").get<std::string>();
    arch.input_side = j.at("input_side").get<std::size_t>();
    arch.channels = j.at("channels").get<std::size_t>();
    arch.num_classes = j.at("num_classes").get<std::size_t>();
    for (const auto& l : j.at("layers")) {
      const auto type = l.at("type").get<std::string>();
      if (type == "conv") {
        arch.layers.emplace_back(layer::Conv{l.at("filters").get<std::size_t>(), l.at("kernel").get<std::size_t>(),
                                             l.value("stride", std::size_t{1})});
      } else if (type == "relu") {
        arch.layers.emplace_back(layer::Relu{});
      } else if (type == "maxpool") {
        arch.layers.emplace_back(layer::MaxPool{l.at("window").get<std::size_t>()});
      } else if (type == "dropout") {
        arch.layers.emplace_back(layer::Dropout{l.at("rate").get<double>()});
      } else if (type == "dense") {
        arch.layers.emplace_back(layer::Dense{l.at("units").get<std::size_t>()});
      } else {
        throw ConsistencyError("unknown layer type '" + type + "'");
      }
    }
    layer_output_shapes(arch);
    return arch;
  } catch (const nlohmann::json::exception& e) {
    throw ConsistencyError(std::string("malformed architecture document: ") + e.what());
  }
}

/// Sidecar descriptor path for a weight file.
inline std::filesystem::path arch_path_for(const std::filesystem::path& weights_path) {
  return weights_path.string() + ".arch.json";
}

inline void save_model(const std::filesystem::path& weights_path, const Network& net) {
  save_weights(weights_path, net.weights());
  const std::string doc = arch_to_json(net.arch()).dump(2) + "\n";
  detail::write_file(arch_path_for(weights_path),
                     std::span(reinterpret_cast<const std::uint8_t*>(doc.data()), doc.size()));
}

inline Network load_model(const std::filesystem::path& weights_path) {
  const auto arch_file = arch_path_for(weights_path);
  if (!std::filesystem::exists(weights_path)) throw ConsistencyError("missing weight file " + weights_path.string());
  if (!std::filesystem::exists(arch_file)) throw ConsistencyError("missing architecture file " + arch_file.string());
  const auto raw = detail::read_file(arch_file);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(raw.begin(), raw.end());
  } catch (const nlohmann::json::exception& e) {
    throw ConsistencyError(arch_file.string() + ": " + e.what());
  }
  return Network(arch_from_json(doc), load_weights(weights_path));
}

}  // namespace advprobe

#endif  // ADVPROBE_SERIALIZE_HPP
