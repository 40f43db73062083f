#ifndef ADVPROBE_DATA_HPP
#define ADVPROBE_DATA_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "advprobe/dataset.hpp"
#include "advprobe/error.hpp"
#include "advprobe/image_io.hpp"
#include "advprobe/rng.hpp"
#include "advprobe/tensor.hpp"

namespace advprobe {

inline constexpr std::size_t kGtsrbClasses = 43;

/// Bilinear resize to side x side with corner-aligned sampling: output corners
/// coincide with input corners. A single output row/column samples the centre.
inline ImageTensor resize_bilinear(const ImageTensor& image, std::size_t side) {
  if (side == 0) throw DomainError("resize_bilinear: side must be positive");
  if (image.rank() != 3) throw DimensionError("resize_bilinear: need (H,W,C), got " + shape_string(image.shape()));
  const std::size_t H = image.dim(0), W = image.dim(1), C = image.dim(2);
  auto source = [side](std::size_t o, std::size_t extent) {
    if (side == 1) return (static_cast<double>(extent) - 1.0) / 2.0;
    return static_cast<double>(o) * static_cast<double>(extent - 1) / static_cast<double>(side - 1);
  };
  ImageTensor out({side, side, C});
  for (std::size_t oy = 0; oy < side; ++oy) {
    const double sy = source(oy, H);
    const auto y0 = std::min(static_cast<std::size_t>(std::floor(sy)), H - 1);
    const std::size_t y1 = std::min(y0 + 1, H - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t ox = 0; ox < side; ++ox) {
      const double sx = source(ox, W);
      const auto x0 = std::min(static_cast<std::size_t>(std::floor(sx)), W - 1);
      const std::size_t x1 = std::min(x0 + 1, W - 1);
      const double fx = sx - static_cast<double>(x0);
      for (std::size_t c = 0; c < C; ++c) {
        const double top = (1.0 - fx) * image.at(y0, x0, c) + fx * image.at(y0, x1, c);
        const double bottom = (1.0 - fx) * image.at(y1, x0, c) + fx * image.at(y1, x1, c);
        out.at(oy, ox, c) = static_cast<float>((1.0 - fy) * top + fy * bottom);
      }
    }
  }
  return out;
}

struct IndexRow {
  std::string path;
  std::size_t label = 0;
};

namespace detail {

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, sep)) out.push_back(field);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

inline std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && s[i] == ' ') ++i;
  return s.substr(i);
}

inline std::size_t parse_label(const std::string& text, std::size_t row) {
  std::size_t used = 0;
  unsigned long v = 0;
  try {
    v = std::stoul(text, &used);
  } catch (const std::exception&) {
    throw IngestionError("label '" + text + "' is not a class index", row);
  }
  if (used != text.size() || text.front() == '-') throw IngestionError("label '" + text + "' is not a class index", row);
  return v;
}

}  // namespace detail

/// Reads an index file. Two layouts are accepted: `path,label` (header required)
/// and the semicolon-separated GTSRB annotation files (`Filename;...;ClassId`).
inline std::vector<IndexRow> read_index(const std::filesystem::path& index_csv) {
  std::ifstream in(index_csv);
  if (!in) throw IngestionError("cannot open index " + index_csv.string(), 0);
  std::string header;
  if (!std::getline(in, header)) throw IngestionError("index " + index_csv.string() + " is empty", 0);
  header = detail::trim(header);
  if (header.size() >= 3 && header.compare(0, 3, "\xEF\xBB\xBF") == 0) header.erase(0, 3);

  char sep = ',';
  std::size_t path_col = 0, label_col = 1;
  if (header == "path,label") {
    sep = ',';
  } else if (header.find(';') != std::string::npos) {
    sep = ';';
    const auto cols = detail::split(header, ';');
    const auto f = std::find(cols.begin(), cols.end(), "Filename");
    const auto c = std::find(cols.begin(), cols.end(), "ClassId");
    if (f == cols.end() || c == cols.end()) throw IngestionError("unrecognised index header '" + header + "'", 0);
    path_col = static_cast<std::size_t>(f - cols.begin());
    label_col = static_cast<std::size_t>(c - cols.begin());
  } else {
    throw IngestionError("unrecognised index header '" + header + "' (expected 'path,label')", 0);
  }

  std::vector<IndexRow> rows;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    line = detail::trim(line);
    if (line.empty()) continue;
    ++row;
    const auto fields = detail::split(line, sep);
    if (fields.size() <= std::max(path_col, label_col)) throw IngestionError("too few fields", row);
    const std::string path = detail::trim(fields[path_col]);
    if (path.empty()) throw IngestionError("empty path", row);
    rows.push_back({path, detail::parse_label(detail::trim(fields[label_col]), row)});
  }
  if (rows.empty()) throw IngestionError("index " + index_csv.string() + " has no data rows", 0);
  return rows;
}

/// Loads every indexed image (paths relative to `root`), resized to side x side RGB in [0,1].
inline LabeledSet load_gtsrb_layout(const std::filesystem::path& root, const std::filesystem::path& index_csv,
                                    std::size_t num_classes = kGtsrbClasses, std::size_t side = 150,
                                    Split split = Split::train) {
  const auto rows = read_index(index_csv);
  LabeledSet set{{}, num_classes, split};
  set.samples.reserve(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const std::size_t row = r + 1;
    if (rows[r].label >= num_classes) {
      throw IngestionError("class " + std::to_string(rows[r].label) + " >= num_classes " + std::to_string(num_classes),
                           row);
    }
    const auto file = root / rows[r].path;
    if (!std::filesystem::exists(file)) throw IngestionError("missing file " + file.string(), row);
    ImageTensor img;
    try {
      img = read_image(file);
    } catch (const IoError& e) {
      throw IngestionError(std::string("undecodable image: ") + e.what(), row);
    }
    if (img.dim(0) != side || img.dim(1) != side) img = resize_bilinear(img, side);
    set.samples.push_back({std::move(img), rows[r].label});
  }
  return set;
}

/// Official GTSRB training tree: <root>/000NN/GT-000NN.csv for every class.
inline LabeledSet load_gtsrb_training_tree(const std::filesystem::path& root, std::size_t side = 150) {
  LabeledSet all{{}, kGtsrbClasses, Split::train};
  for (std::size_t k = 0; k < kGtsrbClasses; ++k) {
    std::ostringstream dir;
    dir << std::setw(5) << std::setfill('0') << k;
    const auto class_dir = root / dir.str();
    auto part = load_gtsrb_layout(class_dir, class_dir / ("GT-" + dir.str() + ".csv"), kGtsrbClasses, side);
    for (auto& s : part.samples) all.samples.push_back(std::move(s));
  }
  return all;
}

namespace detail {

enum class SignShape { circle, triangle, octagon, diamond };

struct SignTemplate {
  SignShape shape;
  std::array<float, 3> rim;
  std::array<float, 3> inner;
};

inline constexpr std::array<float, 3> kRed{0.80f, 0.10f, 0.12f};
inline constexpr std::array<float, 3> kBlue{0.10f, 0.25f, 0.75f};
inline constexpr std::array<float, 3> kYellow{0.95f, 0.80f, 0.10f};
inline constexpr std::array<float, 3> kGreen{0.10f, 0.55f, 0.25f};
inline constexpr std::array<float, 3> kWhite{0.95f, 0.95f, 0.95f};
inline constexpr std::array<float, 3> kBlack{0.08f, 0.08f, 0.08f};

inline constexpr std::array<SignTemplate, 10> kSignTemplates{{
    {SignShape::circle, kRed, kWhite},
    {SignShape::triangle, kRed, kYellow},
    {SignShape::octagon, kRed, kRed},
    {SignShape::diamond, kYellow, kWhite},
    {SignShape::circle, kBlue, kBlue},
    {SignShape::triangle, kBlue, kWhite},
    {SignShape::octagon, kBlue, kWhite},
    {SignShape::diamond, kGreen, kWhite},
    {SignShape::circle, kYellow, kBlack},
    {SignShape::diamond, kRed, kBlue},
}};

/// Membership in the unit sign (circumradius 1) scaled by `scale`.
inline bool inside(SignShape shape, double u, double v, double scale) {
  u /= scale;
  v /= scale;
  if (shape == SignShape::circle) return u * u + v * v <= 1.0;
  const int n = shape == SignShape::triangle ? 3 : shape == SignShape::octagon ? 8 : 4;
  // Vertex angles start at `offset`; edge normals sit halfway between vertices.
  const double offset = shape == SignShape::triangle ? -std::numbers::pi / 2 : shape == SignShape::octagon ? std::numbers::pi / 8 : 0.0;
  const double apothem = std::cos(std::numbers::pi / n);
  for (int k = 0; k < n; ++k) {
    const double a = offset + (2.0 * k + 1.0) * std::numbers::pi / n;
    if (u * std::cos(a) + v * std::sin(a) > apothem) return false;
  }
  return true;
}

inline ImageTensor render_sign(const SignTemplate& tpl, std::size_t side, Rng& rng) {
  ImageTensor img({side, side, 3});
  const double s = static_cast<double>(side);
  std::array<double, 3> bg_top{}, bg_bottom{}, rim{}, inner{};
  for (int c = 0; c < 3; ++c) {
    bg_top[c] = rng.uniform(0.2, 0.7);
    bg_bottom[c] = rng.uniform(0.15, 0.6);
    rim[c] = std::clamp(tpl.rim[c] + rng.uniform(-0.06, 0.06), 0.0, 1.0);
    inner[c] = std::clamp(tpl.inner[c] + rng.uniform(-0.06, 0.06), 0.0, 1.0);
  }
  const double cx = s / 2 + rng.uniform(-0.08, 0.08) * s;
  const double cy = s / 2 + rng.uniform(-0.08, 0.08) * s;
  const double radius = rng.uniform(0.28, 0.40) * s;
  const double angle = rng.uniform(-0.25, 0.25);
  const double stretch = rng.uniform(0.9, 1.1);
  const double shear = rng.uniform(-0.1, 0.1);
  const double brightness = rng.uniform(0.7, 1.2);
  const double ca = std::cos(angle), sa = std::sin(angle);

  for (std::size_t y = 0; y < side; ++y) {
    const double t = static_cast<double>(y) / (s - 1.0);
    for (std::size_t x = 0; x < side; ++x) {
      // Inverse affine map into the sign frame.
      const double dx = (static_cast<double>(x) - cx) / radius;
      const double dy = (static_cast<double>(y) - cy) / radius;
      double u = ca * dx + sa * dy;
      const double v = (-sa * dx + ca * dy) / stretch;
      u -= shear * v;
      std::array<double, 3> colour{};
      if (inside(tpl.shape, u, v, 0.72)) {
        colour = inner;
      } else if (inside(tpl.shape, u, v, 1.0)) {
        colour = rim;
      } else {
        for (int c = 0; c < 3; ++c) colour[c] = (1.0 - t) * bg_top[c] + t * bg_bottom[c];
      }
      for (std::size_t c = 0; c < 3; ++c) {
        const double noisy = colour[c] * brightness + rng.uniform(-0.05, 0.05);
        img.at(y, x, c) = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
      }
    }
  }
  return img;
}

}  // namespace detail

/// Deterministic synthetic traffic-sign corpus. Sample i has label i % K and is
/// rendered from its own seed, so the set is interleaved and class balanced.
inline LabeledSet synth_signs(std::size_t num_classes, std::size_t per_class, std::uint64_t seed,
                              std::size_t side = 150, Split split = Split::train) {
  if (num_classes < 2 || num_classes > detail::kSignTemplates.size()) {
    throw DomainError("synth_signs: num_classes must be in [2, 10]");
  }
  if (per_class == 0) throw DomainError("synth_signs: per_class must be positive");
  LabeledSet set{{}, num_classes, split};
  const std::size_t total = num_classes * per_class;
  set.samples.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    Rng rng(mix_seed(seed, i));
    const std::size_t label = i % num_classes;
    set.samples.push_back({detail::render_sign(detail::kSignTemplates[label], side, rng), label});
  }
  return set;
}

/// Writes `<dir>/images/NNNNN.png` plus `<dir>/index.csv` in the loader's format.
inline void export_corpus(const LabeledSet& set, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  if (ec) throw IoError("cannot create " + (dir / "images").string() + ": " + ec.message());
  std::ofstream index(dir / "index.csv", std::ios::binary | std::ios::trunc);
  if (!index) throw IoError("cannot write " + (dir / "index.csv").string());
  index << "path,label\n";
  for (std::size_t i = 0; i < set.size(); ++i) {
    std::ostringstream name;
    name << "images/" << std::setw(5) << std::setfill('0') << i << ".png";
    write_png(dir / name.str(), set.samples[i].image);
    index << name.str() << ',' << set.samples[i].label << '\n';
  }
  if (!index) throw IoError("short write to " + (dir / "index.csv").string());
}

/// Loads a corpus written by export_corpus.
inline LabeledSet load_corpus(const std::filesystem::path& dir, std::size_t num_classes, std::size_t side = 150,
                              Split split = Split::train) {
  return load_gtsrb_layout(dir, dir / "index.csv", num_classes, side, split);
}

}  // namespace advprobe

#endif  // ADVPROBE_DATA_HPP
