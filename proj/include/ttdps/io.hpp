#pragma once

// File formats:
//   raster       little-endian float32, row-major, plus `<path>.json` sidecar {n, h, kind, level}
//   measurements CSV, first row transmitter ids, first column receiver ids
//   preview      8-bit binary PGM, min-max scaled
//   model        one JSON header line, then little-endian float32 parameters
//   gmm          JSON

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ttdps/denoiser.hpp"
#include "ttdps/errors.hpp"
#include "ttdps/gmm.hpp"
#include "ttdps/grid.hpp"

namespace ttdps {

namespace fs = std::filesystem;
using Json = nlohmann::json;

enum class RasterKind { kVelocity, kTraveltime };

inline std::string to_string(RasterKind k) { return k == RasterKind::kVelocity ? "velocity" : "traveltime"; }
inline RasterKind parse_raster_kind(const std::string& s) {
  if (s == "velocity") return RasterKind::kVelocity;
  if (s == "traveltime") return RasterKind::kTraveltime;
  throw InvalidArgument("unknown raster kind '" + s + "'");
}

namespace detail {

/// Writes to a sibling temporary and renames it into place.
inline void write_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

inline std::string read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void append_f32(std::string& out, float v) {
  auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

inline float read_f32(const char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<float>(bits);
}

inline Json parse_json(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const Json::exception& e) {
    throw IoError("malformed JSON in " + what + ": " + e.what());
  }
}

inline fs::path sidecar_path(const fs::path& p) {
  fs::path s = p;
  s += ".json";
  return s;
}

}  // namespace detail

struct RasterFile {
  Raster raster;
  RasterKind kind = RasterKind::kVelocity;
  int level = 0;
};

inline void write_raster(const fs::path& path, const Raster& r, RasterKind kind = RasterKind::kVelocity,
                         int level = 0) {
  std::string bytes;
  bytes.reserve(4 * r.size());
  for (double v : r.values()) detail::append_f32(bytes, static_cast<float>(v));
  const Json meta = {{"n", r.side()}, {"h", r.grid().h}, {"kind", to_string(kind)}, {"level", level}};
  detail::write_atomic(path, bytes);
  detail::write_atomic(detail::sidecar_path(path), meta.dump(2) + "\n");
}

inline RasterFile read_raster(const fs::path& path) {
  const Json meta = detail::parse_json(detail::read_all(detail::sidecar_path(path)), detail::sidecar_path(path).string());
  RasterFile f;
  int n = 0;
  try {
    n = meta.at("n").get<int>();
    f.kind = parse_raster_kind(meta.at("kind").get<std::string>());
    f.level = meta.value("level", 0);
  } catch (const Json::exception& e) {
    throw IoError("bad raster sidecar " + path.string() + ": " + e.what());
  }
  if (n < 1) throw IoError("bad raster side in " + path.string());
  const std::string bytes = detail::read_all(path);
  const std::size_t count = static_cast<std::size_t>(n) * static_cast<std::size_t>(n);
  if (bytes.size() != 4 * count)
    throw IoError(path.string() + " holds " + std::to_string(bytes.size()) + " bytes, expected " +
                  std::to_string(4 * count));
  std::vector<double> v(count);
  for (std::size_t i = 0; i < count; ++i) v[i] = detail::read_f32(bytes.data() + 4 * i);
  f.raster = Raster(n >= 3 ? Grid2D::with_nodes(n) : Grid2D::unchecked(n), std::move(v));
  return f;
}

inline VelocityField read_velocity(const fs::path& path) {
  RasterFile f = read_raster(path);
  if (f.kind != RasterKind::kVelocity) throw InvalidArgument(path.string() + " is not a velocity raster");
  // float32 storage can land a bound value one ulp outside the range.
  for (double v : f.raster.values())
    if (!(v >= kMinVelocity - 1e-6 && v <= kMaxVelocity + 1e-6))
      throw InvalidArgument(path.string() + " holds velocity " + std::to_string(v) + " outside [0.01, 1]");
  return VelocityField::clamped(std::move(f.raster));
}

inline std::string measurements_to_csv(const MeasurementMatrix& y) {
  std::ostringstream out;
  out.precision(17);
  out << "rx\\tx";
  for (int id : y.transmitter_ids) out << ',' << id;
  out << '\n';
  for (int r = 0; r < y.rows(); ++r) {
    out << y.receiver_ids[static_cast<std::size_t>(r)];
    for (int c = 0; c < y.cols(); ++c) out << ',' << y(r, c);
    out << '\n';
  }
  return out.str();
}

inline void write_measurements(const fs::path& path, const MeasurementMatrix& y) {
  detail::write_atomic(path, measurements_to_csv(y));
}

inline MeasurementMatrix read_measurements(const fs::path& path) {
  std::istringstream in(detail::read_all(path));
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    return cells;
  };
  std::string line;
  if (!std::getline(in, line)) throw IoError(path.string() + " is empty");
  const auto head = split(line);
  if (head.size() < 2) throw IoError(path.string() + " has no transmitter columns");
  std::vector<int> tx;
  std::vector<int> rx;
  std::vector<std::vector<double>> rows;
  try {
    for (std::size_t i = 1; i < head.size(); ++i) tx.push_back(std::stoi(head[i]));
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto cells = split(line);
      if (cells.size() != head.size())
        throw IoError(path.string() + ": row " + std::to_string(rows.size() + 1) + " has " +
                      std::to_string(cells.size()) + " cells, expected " + std::to_string(head.size()));
      rx.push_back(std::stoi(cells[0]));
      std::vector<double> row;
      for (std::size_t i = 1; i < cells.size(); ++i) row.push_back(std::stod(cells[i]));
      rows.push_back(std::move(row));
    }
  } catch (const std::logic_error&) {
    throw IoError(path.string() + " contains a non-numeric cell");
  }
  MeasurementMatrix y(static_cast<int>(rows.size()), static_cast<int>(tx.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < tx.size(); ++c) y(static_cast<int>(r), static_cast<int>(c)) = rows[r][c];
  y.transmitter_ids = std::move(tx);
  y.receiver_ids = std::move(rx);
  return y;
}

inline void write_pgm(const fs::path& path, const Raster& r) {
  const double lo = r.min(), hi = r.max();
  const double span = hi > lo ? hi - lo : 1.0;
  std::string bytes = "P5\n" + std::to_string(r.side()) + " " + std::to_string(r.side()) + "\n255\n";
  // Row 0 is y = 0; images are stored top row first, so flip.
  for (int row = r.side() - 1; row >= 0; --row)
    for (int c = 0; c < r.side(); ++c)
      bytes.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * (r(row, c) - lo) / span))));
  detail::write_atomic(path, bytes);
}

inline Json to_json(const NoiseSchedule& s) {
  return {{"beta_min", s.beta_min}, {"beta_max", s.beta_max}, {"t_end", s.t_end}};
}

inline NoiseSchedule schedule_from_json(const Json& j) {
  NoiseSchedule s;
  s.beta_min = j.value("beta_min", s.beta_min);
  s.beta_max = j.value("beta_max", s.beta_max);
  s.t_end = j.value("t_end", s.t_end);
  s.validate();
  return s;
}

inline void save_model(const fs::path& path, const DenoiserModel& m) {
  const auto& a = m.architecture();
  const Json header = {
      {"format", "ttdps-mlp"},
      {"architecture",
       {{"layers", {a.dimension + 2, a.hidden, a.hidden, a.dimension}},
        {"nonlinearity", a.nonlinearity},
        {"time_features", {"sqrt_alpha_bar", "one_minus_alpha_bar"}},
        {"output", "noise"}}},
      {"dimension", a.dimension},
      {"level", m.level()},
      {"schedule", to_json(m.schedule())},
      {"parameter_count", m.parameters().size()},
      {"dataset", m.dataset_id},
      {"final_loss", m.final_loss}};
  std::string bytes = header.dump() + "\n";
  for (float v : m.parameters()) detail::append_f32(bytes, v);
  detail::write_atomic(path, bytes);
}

inline DenoiserModel load_model(const fs::path& path) {
  const std::string bytes = detail::read_all(path);
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) throw IoError(path.string() + " has no model header");
  const Json h = detail::parse_json(bytes.substr(0, nl), path.string());
  try {
    if (h.at("format").get<std::string>() != "ttdps-mlp") throw IoError(path.string() + " is not a model file");
    const auto layers = h.at("architecture").at("layers").get<std::vector<int>>();
    if (layers.size() != 4 || layers[1] != layers[2]) throw IoError(path.string() + ": unsupported layer layout");
    DenoiserArchitecture a{h.at("dimension").get<int>(), layers[1],
                           h.at("architecture").at("nonlinearity").get<std::string>()};
    const std::size_t count = h.at("parameter_count").get<std::size_t>();
    if (bytes.size() - nl - 1 != 4 * count)
      throw IoError(path.string() + ": parameter block has the wrong length");
    std::vector<float> p(count);
    for (std::size_t i = 0; i < count; ++i) p[i] = detail::read_f32(bytes.data() + nl + 1 + 4 * i);
    DenoiserModel m(a, schedule_from_json(h.at("schedule")), std::move(p), h.value("level", 0));
    m.dataset_id = h.value("dataset", std::string{});
    m.final_loss = h.value("final_loss", 0.0);
    return m;
  } catch (const Json::exception& e) {
    throw IoError("bad model header in " + path.string() + ": " + e.what());
  }
}

inline Json to_json(const GmmPrior& p) {
  Json comps = Json::array();
  auto vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  auto mat_cols = [&](const Eigen::MatrixXd& m) {
    Json cols = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) cols.push_back(vec(m.col(j)));
    return cols;
  };
  for (const auto& c : p.components()) {
    Json cov;
    switch (c.covariance.kind) {
      case Covariance::Kind::kFull: cov = {{"kind", "full"}, {"columns", mat_cols(c.covariance.full)}}; break;
      case Covariance::Kind::kDiagonal: cov = {{"kind", "diagonal"}, {"diagonal", vec(c.covariance.diagonal)}}; break;
      case Covariance::Kind::kLowRank:
        cov = {{"kind", "low_rank"}, {"columns", mat_cols(c.covariance.factor)}, {"isotropic", c.covariance.isotropic}};
        break;
    }
    comps.push_back({{"weight", c.weight}, {"mean", vec(c.mean)}, {"covariance", cov}});
  }
  return {{"format", "ttdps-gmm"}, {"dimension", p.dimension()}, {"components", comps}};
}

inline GmmPrior gmm_from_json(const Json& j) {
  auto vec = [](const Json& a) {
    const auto v = a.get<std::vector<double>>();
    return Vector(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
  };
  auto mat_cols = [&](const Json& cols, Eigen::Index rows) {
    Eigen::MatrixXd m(rows, static_cast<Eigen::Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) {
      const Vector col = vec(cols[c]);
      detail::require(col.size() == rows, "covariance column has the wrong length");
      m.col(static_cast<Eigen::Index>(c)) = col;
    }
    return m;
  };
  try {
    std::vector<GmmComponent> comps;
    for (const auto& c : j.at("components")) {
      GmmComponent g;
      g.weight = c.at("weight").get<double>();
      g.mean = vec(c.at("mean"));
      const auto& cov = c.at("covariance");
      const std::string kind = cov.at("kind").get<std::string>();
      if (kind == "full") g.covariance = Covariance::make_full(mat_cols(cov.at("columns"), g.mean.size()));
      else if (kind == "diagonal") g.covariance = Covariance::make_diagonal(vec(cov.at("diagonal")));
      else if (kind == "low_rank")
        g.covariance = Covariance::make_low_rank(mat_cols(cov.at("columns"), g.mean.size()),
                                                 cov.at("isotropic").get<double>());
      else throw InvalidArgument("unknown covariance kind '" + kind + "'");
      comps.push_back(std::move(g));
    }
    return GmmPrior(std::move(comps));
  } catch (const Json::exception& e) {
    throw InvalidArgument(std::string("malformed mixture description: ") + e.what());
  }
}

inline void save_gmm(const fs::path& path, const GmmPrior& p) { detail::write_atomic(path, to_json(p).dump() + "\n"); }

inline GmmPrior load_gmm(const fs::path& path) {
  return gmm_from_json(detail::parse_json(detail::read_all(path), path.string()));
}

inline void write_text(const fs::path& path, const std::string& text) { detail::write_atomic(path, text); }

}  // namespace ttdps
