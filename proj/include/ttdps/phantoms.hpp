#pragma once

// Synthetic velocity fields: shape phantoms on a 0.5 background and a
// layered model with dipping interfaces and vertical faults. Also noisy
// measurement simulation and dataset export.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <string>
#include <vector>

#include "ttdps/eikonal.hpp"
#include "ttdps/errors.hpp"
#include "ttdps/grid.hpp"
#include "ttdps/io.hpp"
#include "ttdps/rng.hpp"

namespace ttdps {

enum class PhantomKind { kKit4, kLayered };

inline std::string to_string(PhantomKind k) { return k == PhantomKind::kKit4 ? "kit4" : "layered"; }
inline PhantomKind parse_phantom_kind(const std::string& s) {
  if (s == "kit4") return PhantomKind::kKit4;
  if (s == "layered") return PhantomKind::kLayered;
  throw InvalidArgument("unknown phantom kind '" + s + "'");
}

struct PhantomSpec {
  PhantomKind kind = PhantomKind::kKit4;
  int min_shapes = 1;
  int max_shapes = 4;
  double v_min = kMinVelocity;
  double v_max = kMaxVelocity;
  double background = 0.5;
  int min_layers = 4;
  int max_layers = 10;
  /// Largest interface slope |dy/dx|.
  double max_dip = 0.3;
  int max_faults = 2;
  std::uint64_t seed = 0;

  void validate() const {
    detail::require(v_min >= kMinVelocity && v_max <= kMaxVelocity && v_min <= v_max,
                    "velocity range must lie inside [0.01, 1]");
    detail::require(background >= kMinVelocity && background <= kMaxVelocity, "background outside [0.01, 1]");
    detail::require(min_shapes >= 1 && max_shapes <= 4 && min_shapes <= max_shapes,
                    "shape count range must lie inside [1, 4]");
    detail::require(min_layers >= 1 && min_layers <= max_layers, "invalid layer count range");
    detail::require(max_dip >= 0.0 && max_faults >= 0, "dip and fault limits must be non-negative");
  }
};

inline constexpr int kPlacementRetries = 100;

namespace detail {

/// Point-in-shape test in unit-square coordinates.
struct Shape {
  enum class Kind { kEllipse, kRectangle, kPolygon } kind = Kind::kEllipse;
  double cx = 0, cy = 0, a = 0, b = 0, angle = 0;
  int sides = 0;

  bool contains(double x, double y) const {
    const double ca = std::cos(angle), sa = std::sin(angle);
    const double u = ca * (x - cx) + sa * (y - cy);
    const double v = -sa * (x - cx) + ca * (y - cy);
    switch (kind) {
      case Kind::kEllipse: return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
      case Kind::kRectangle: return std::abs(u) <= a && std::abs(v) <= b;
      case Kind::kPolygon: {
        // Regular polygon with circumradius a: inside every edge half-plane.
        const double apothem = a * std::cos(std::numbers::pi / sides);
        for (int k = 0; k < sides; ++k) {
          const double phi = 2.0 * std::numbers::pi * (k + 0.5) / sides;
          if (u * std::cos(phi) + v * std::sin(phi) > apothem) return false;
        }
        return true;
      }
    }
    return false;
  }
};

inline Shape random_shape(RngStream& rng) {
  Shape s;
  s.kind = static_cast<Shape::Kind>(rng.uniform_int(0, 2));
  s.cx = rng.uniform(0.15, 0.85);
  s.cy = rng.uniform(0.15, 0.85);
  s.a = rng.uniform(0.06, 0.22);
  s.b = s.kind == Shape::Kind::kPolygon ? s.a : rng.uniform(0.06, 0.22);
  s.angle = rng.uniform(0.0, std::numbers::pi);
  s.sides = rng.uniform_int(3, 7);
  return s;
}

}  // namespace detail

/// Shape masks of a generated phantom, exposed for overlap checks.
struct Kit4Phantom {
  VelocityField field;
  std::vector<std::vector<std::uint8_t>> masks;
};

inline Kit4Phantom gen_kit4_with_masks(const PhantomSpec& spec, const Grid2D& grid) {
  spec.validate();
  RngStream rng(spec.seed, StreamPurpose::kPhantom, 0);
  const int count = rng.uniform_int(spec.min_shapes, spec.max_shapes);
  std::vector<std::uint8_t> taken(grid.size(), 0);
  Raster r(grid, spec.background);
  Kit4Phantom out;
  for (int s = 0; s < count; ++s) {
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementRetries && !placed; ++attempt) {
      const auto shape = detail::random_shape(rng);
      std::vector<std::uint8_t> mask(grid.size(), 0);
      std::size_t area = 0;
      bool clash = false;
      for (int row = 0; row < grid.n && !clash; ++row)
        for (int col = 0; col < grid.n; ++col) {
          if (!shape.contains(col * grid.h, row * grid.h)) continue;
          const std::size_t i = flat_index(grid, {row, col});
          if (taken[i]) {
            clash = true;
            break;
          }
          mask[i] = 1;
          ++area;
        }
      if (clash || area == 0) continue;
      const double value = rng.uniform(spec.v_min, spec.v_max);
      for (std::size_t i = 0; i < grid.size(); ++i)
        if (mask[i]) {
          taken[i] = 1;
          r[i] = value;
        }
      out.masks.push_back(std::move(mask));
      placed = true;
    }
    if (!placed)
      throw GenerationFailure("could not place shape " + std::to_string(s + 1) + " of " + std::to_string(count) +
                              " after " + std::to_string(kPlacementRetries) + " attempts");
  }
  out.field = VelocityField(std::move(r));
  return out;
}

inline VelocityField gen_kit4(const PhantomSpec& spec, const Grid2D& grid) {
  return gen_kit4_with_masks(spec, grid).field;
}

inline VelocityField gen_layered(const PhantomSpec& spec, const Grid2D& grid) {
  spec.validate();
  RngStream rng(spec.seed, StreamPurpose::kPhantom, 1);
  const int layers = rng.uniform_int(spec.min_layers, spec.max_layers);
  struct Interface {
    double y0, slope;
  };
  std::vector<Interface> cuts;
  for (int i = 0; i + 1 < layers; ++i) cuts.push_back({rng.uniform(0.0, 1.0), rng.uniform(-spec.max_dip, spec.max_dip)});
  std::sort(cuts.begin(), cuts.end(), [](const Interface& a, const Interface& b) { return a.y0 < b.y0; });
  std::vector<double> speed;
  for (int i = 0; i < layers; ++i) speed.push_back(rng.uniform(spec.v_min, spec.v_max));
  struct Fault {
    double x, throw_;
  };
  std::vector<Fault> faults;
  const int nf = spec.max_faults > 0 ? rng.uniform_int(0, spec.max_faults) : 0;
  for (int i = 0; i < nf; ++i) faults.push_back({rng.uniform(0.2, 0.8), rng.uniform(-0.15, 0.15)});

  Raster r(grid, 0.0);
  for (int row = 0; row < grid.n; ++row)
    for (int col = 0; col < grid.n; ++col) {
      const double x = col * grid.h;
      double y = row * grid.h;
      for (const auto& f : faults)
        if (x > f.x) y -= f.throw_;
      int layer = 0;
      for (const auto& c : cuts)
        if (y > c.y0 + c.slope * (x - 0.5)) ++layer;
      r(row, col) = std::clamp(speed[static_cast<std::size_t>(layer)], kMinVelocity, kMaxVelocity);
    }
  return VelocityField(std::move(r));
}

inline VelocityField gen_phantom(const PhantomSpec& spec, const Grid2D& grid) {
  return spec.kind == PhantomKind::kKit4 ? gen_kit4(spec, grid) : gen_layered(spec, grid);
}

/// forward_map plus N(0, (noise_std * mean|clean|)^2) per entry.
inline MeasurementMatrix simulate(const VelocityField& c, const SourceReceiverConfig& config, double noise_std,
                                  std::uint64_t seed, unsigned threads = 0) {
  detail::require(noise_std >= 0.0, "noise level must be non-negative");
  MeasurementMatrix y = forward_map(c, config, threads);
  if (noise_std == 0.0) return y;
  double scale = 0.0;
  for (double v : y.values()) scale += std::abs(v);
  scale /= static_cast<double>(y.values().size());
  RngStream rng(seed, StreamPurpose::kNoise, 0);
  for (double& v : y.values()) v += noise_std * scale * rng.normal();
  return y;
}

enum class DatasetSplit { kTrain, kTest };

/// Test seeds start this far above the base seed, so the splits never share one.
inline constexpr std::uint64_t kTestSeedOffset = 1ULL << 32;

struct DatasetEntry {
  std::string id;
  std::string path;  // relative to the manifest
  std::uint64_t seed = 0;
};

struct DatasetManifest {
  PhantomSpec spec;
  int n = 0;
  DatasetSplit split = DatasetSplit::kTrain;
  std::vector<DatasetEntry> entries;
};

inline std::uint64_t dataset_seed(std::uint64_t base, DatasetSplit split, int index) {
  return base + (split == DatasetSplit::kTest ? kTestSeedOffset : 0) + static_cast<std::uint64_t>(index);
}

inline Json to_json(const PhantomSpec& s) {
  return {{"kind", to_string(s.kind)},   {"min_shapes", s.min_shapes}, {"max_shapes", s.max_shapes},
          {"v_min", s.v_min},            {"v_max", s.v_max},           {"background", s.background},
          {"min_layers", s.min_layers},  {"max_layers", s.max_layers}, {"max_dip", s.max_dip},
          {"max_faults", s.max_faults},  {"seed", s.seed}};
}

inline Json to_json(const DatasetManifest& m) {
  Json entries = Json::array();
  for (const auto& e : m.entries) entries.push_back({{"id", e.id}, {"path", e.path}, {"seed", e.seed}});
  return {{"format", "ttdps-dataset"},
          {"n", m.n},
          {"split", m.split == DatasetSplit::kTrain ? "train" : "test"},
          {"spec", to_json(m.spec)},
          {"entries", entries}};
}

inline constexpr const char* kManifestName = "manifest.json";

/// Writes `count` phantoms plus manifest.json into out_dir.
inline DatasetManifest make_dataset(const PhantomSpec& spec, const Grid2D& grid, int count, const fs::path& out_dir,
                                    DatasetSplit split = DatasetSplit::kTrain) {
  detail::require(count >= 1, "dataset needs at least one sample");
  spec.validate();
  DatasetManifest m;
  m.spec = spec;
  m.n = grid.n;
  m.split = split;
  for (int i = 0; i < count; ++i) {
    PhantomSpec s = spec;
    s.seed = dataset_seed(spec.seed, split, i);
    char id[32];
    std::snprintf(id, sizeof id, "%s_%05d", split == DatasetSplit::kTrain ? "train" : "test", i);
    const std::string rel = std::string(id) + ".f32";
    write_raster(out_dir / rel, gen_phantom(s, grid).raster());
    m.entries.push_back({id, rel, s.seed});
  }
  write_text(out_dir / kManifestName, to_json(m).dump(2) + "\n");
  return m;
}

/// Loads every raster listed in a manifest, flattened row-major.
inline std::vector<Vector> load_dataset(const fs::path& manifest_path) {
  const Json j = detail::parse_json(detail::read_all(manifest_path), manifest_path.string());
  std::vector<Vector> out;
  try {
    for (const auto& e : j.at("entries")) {
      const RasterFile f = read_raster(manifest_path.parent_path() / e.at("path").get<std::string>());
      out.push_back(Eigen::Map<const Vector>(f.raster.data().data(), static_cast<Eigen::Index>(f.raster.size())));
    }
  } catch (const Json::exception& e) {
    throw IoError("bad dataset manifest " + manifest_path.string() + ": " + e.what());
  }
  if (out.empty()) throw InvalidArgument("dataset " + manifest_path.string() + " lists no samples");
  return out;
}

}  // namespace ttdps
