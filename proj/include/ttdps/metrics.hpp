#pragma once

// RMSE and SSIM, plus directory-level evaluation reports.

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ttdps/errors.hpp"
#include "ttdps/grid.hpp"
#include "ttdps/io.hpp"

namespace ttdps {

inline double rmse(const Raster& a, const Raster& b) {
  detail::require(a.grid() == b.grid(), "rmse: raster sizes differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(acc / static_cast<double>(a.size()));
}

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double range = 1.0;
};

/// Mean SSIM over every window position that fits inside the image.
inline double ssim(const Raster& a, const Raster& b, const SsimParams& p = {}) {
  detail::require(a.grid() == b.grid(), "ssim: raster sizes differ");
  const int n = a.side(), w = p.window;
  detail::require(n >= w, "ssim needs images of side >= " + std::to_string(w) + ", got " + std::to_string(n));
  std::vector<double> g(static_cast<std::size_t>(w) * w);
  double total = 0.0;
  for (int i = 0; i < w; ++i)
    for (int j = 0; j < w; ++j) {
      const double di = i - (w - 1) / 2.0, dj = j - (w - 1) / 2.0;
      total += g[static_cast<std::size_t>(i) * w + j] = std::exp(-(di * di + dj * dj) / (2 * p.sigma * p.sigma));
    }
  for (double& v : g) v /= total;
  const double c1 = (p.k1 * p.range) * (p.k1 * p.range), c2 = (p.k2 * p.range) * (p.k2 * p.range);
  double sum = 0.0;
  int count = 0;
  for (int r0 = 0; r0 + w <= n; ++r0)
    for (int c0 = 0; c0 + w <= n; ++c0) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int i = 0; i < w; ++i)
        for (int j = 0; j < w; ++j) {
          const double wt = g[static_cast<std::size_t>(i) * w + j];
          const double x = a(r0 + i, c0 + j), y = b(r0 + i, c0 + j);
          ma += wt * x;
          mb += wt * y;
          saa += wt * x * x;
          sbb += wt * y * y;
          sab += wt * x * y;
        }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      sum += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return sum / count;
}

struct EvalEntry {
  std::string id;
  double rmse = 0.0;
  double ssim = 0.0;
};

struct EvalReport {
  std::string method;
  std::vector<EvalEntry> entries;
  double mean_rmse = 0.0, median_rmse = 0.0, mean_ssim = 0.0, median_ssim = 0.0;
};

inline double median(std::vector<double> v) {
  detail::require(!v.empty(), "median of an empty list");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

inline void summarize(EvalReport& r) {
  std::vector<double> rm, ss;
  for (const auto& e : r.entries) {
    rm.push_back(e.rmse);
    ss.push_back(e.ssim);
  }
  double a = 0, b = 0;
  for (std::size_t i = 0; i < rm.size(); ++i) {
    a += rm[i];
    b += ss[i];
  }
  r.mean_rmse = a / static_cast<double>(rm.size());
  r.mean_ssim = b / static_cast<double>(ss.size());
  r.median_rmse = median(rm);
  r.median_ssim = median(ss);
}

namespace detail {

/// id -> path for every raster (a file with a `.json` sidecar) in dir.
inline std::map<std::string, fs::path> list_rasters(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError(dir.string() + " is not a directory");
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().extension() == ".json") continue;
    if (!fs::exists(sidecar_path(e.path()))) continue;
    out[e.path().stem().string()] = e.path();
  }
  return out;
}

}  // namespace detail

/// Pairs rasters by file stem. Every id must exist on both sides.
inline EvalReport evaluate(const fs::path& results_dir, const fs::path& truth_dir, std::string method = {}) {
  const auto res = detail::list_rasters(results_dir);
  const auto truth = detail::list_rasters(truth_dir);
  std::vector<std::string> missing;
  for (const auto& [id, _] : res)
    if (!truth.count(id)) missing.push_back(id + " (no truth)");
  for (const auto& [id, _] : truth)
    if (!res.count(id)) missing.push_back(id + " (no result)");
  if (!missing.empty()) {
    std::string msg = "unpaired samples:";
    for (const auto& m : missing) msg += " " + m;
    throw InvalidArgument(msg);
  }
  detail::require(!res.empty(), "no rasters found in " + results_dir.string());
  EvalReport r;
  r.method = std::move(method);
  for (const auto& [id, path] : res) {
    const Raster a = read_raster(path).raster, b = read_raster(truth.at(id)).raster;
    r.entries.push_back({id, rmse(a, b), ssim(a, b)});
  }
  summarize(r);
  return r;
}

inline std::string report_csv(const EvalReport& r) {
  std::ostringstream out;
  out.precision(17);
  out << "id,rmse,ssim\n";
  for (const auto& e : r.entries) out << e.id << ',' << e.rmse << ',' << e.ssim << '\n';
  return out.str();
}

inline Json to_json(const EvalReport& r) {
  Json entries = Json::array();
  for (const auto& e : r.entries) entries.push_back({{"id", e.id}, {"rmse", e.rmse}, {"ssim", e.ssim}});
  return {{"method", r.method},
          {"count", r.entries.size()},
          {"mean_rmse", r.mean_rmse},
          {"median_rmse", r.median_rmse},
          {"mean_ssim", r.mean_ssim},
          {"median_ssim", r.median_ssim},
          {"entries", entries}};
}

}  // namespace ttdps
