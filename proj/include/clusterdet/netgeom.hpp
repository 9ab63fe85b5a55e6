#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"

namespace clusterdet {

enum class Placement { RegularLattice, UniformRandom };

// A clustered sensor field: a square region of area n_nominal*A0 tiled by m
// equal rectangular cluster cells, one cluster head per cell at its centroid.
// Node ids are contiguous per cluster (members of cluster i come before those
// of cluster i+1), which keeps covariance blocks contiguous downstream.
struct NetworkLayout {
  int n = 0;          // realized node count
  int m = 0;          // cluster count
  int l_nominal = 0;  // target nodes per cluster (exact for grid layouts)
  double A0 = 1.0;    // area per node
  double epsilon = 2.0;
  std::uint64_t seed = 0;

  double region_w = 0.0, region_h = 0.0;  // equal for the square region
  int tiles_r = 0, tiles_c = 0;           // tiling of the m cluster cells
  Placement placement = Placement::RegularLattice;

  std::vector<Eigen::Vector2d> positions;     // length n
  std::vector<int> cluster_of;                // length n, 0-based cluster ids
  std::vector<std::vector<int>> members;      // length m, node ids per cluster
  std::vector<Eigen::Vector2d> ch_positions;  // length m

  double tile_w() const { return region_w / tiles_c; }
  double tile_h() const { return region_h / tiles_r; }

  // Distance clamp: physical nodes are never exactly co-located with the CH.
  double d_min() const { return 1e-3 * std::sqrt(A0); }

  double distance_to_ch(int k) const {
    return (positions[k] - ch_positions[cluster_of[k]]).norm();
  }

  // Throws if the members/cluster_of pair is not an exact partition or any
  // node falls outside its cluster cell.
  void validate() const;
};

// Factor m = r*c with r <= c and |r - c| minimal.
inline std::pair<int, int> closest_factors(int m) {
  int best_r = 1;
  for (int r = 1; r * r <= m; ++r)
    if (m % r == 0) best_r = r;
  return {best_r, m / best_r};
}

namespace detail {

// Origin (lower-left corner) of cluster cell i in a row-major r x c tiling.
inline Eigen::Vector2d tile_origin(const NetworkLayout& lay, int i) {
  const int row = i / lay.tiles_c, col = i % lay.tiles_c;
  return {col * lay.tile_w(), row * lay.tile_h()};
}

// Sub-grid factorization of l inside a w x h cell: pick cols*rows = l with the
// most nearly square micro-cells (minimal |w/cols - h/rows|).
inline std::pair<int, int> lattice_factors(int l, double w, double h) {
  int best_cols = 1, best_rows = l;
  double best_gap = std::abs(w / 1 - h / l);
  for (int cols = 1; cols <= l; ++cols) {
    if (l % cols != 0) continue;
    const int rows = l / cols;
    const double gap = std::abs(w / cols - h / rows);
    if (gap < best_gap) {
      best_gap = gap;
      best_cols = cols;
      best_rows = rows;
    }
  }
  return {best_cols, best_rows};
}

inline void finalize_members(NetworkLayout& lay) {
  lay.members.assign(lay.m, {});
  for (int k = 0; k < lay.n; ++k) lay.members[lay.cluster_of[k]].push_back(k);
}

}  // namespace detail

inline void NetworkLayout::validate() const {
  if (static_cast<int>(positions.size()) != n ||
      static_cast<int>(cluster_of.size()) != n)
    throw DimensionMismatchError("layout arrays inconsistent with node count");
  if (static_cast<int>(members.size()) != m ||
      static_cast<int>(ch_positions.size()) != m)
    throw DimensionMismatchError("layout arrays inconsistent with cluster count");
  std::vector<int> seen(n, 0);
  for (int i = 0; i < m; ++i)
    for (int k : members[i]) {
      if (k < 0 || k >= n || cluster_of[k] != i)
        throw Error("cluster membership is not a partition");
      ++seen[k];
    }
  for (int k = 0; k < n; ++k)
    if (seen[k] != 1) throw Error("cluster membership is not a partition");
  const double slack = 1e-9 * std::max(region_w, region_h);
  for (int k = 0; k < n; ++k) {
    const Eigen::Vector2d o = detail::tile_origin(*this, cluster_of[k]);
    const Eigen::Vector2d p = positions[k] - o;
    if (p.x() < -slack || p.y() < -slack || p.x() > tile_w() + slack ||
        p.y() > tile_h() + slack)
      throw Error("node lies outside its cluster cell");
  }
}

// Grid network: n = m*l nodes, every cluster holds exactly l of them, either
// on a deterministic near-square lattice or i.i.d. uniform inside the cell.
inline NetworkLayout build_grid_network(int n, int l, double A0,
                                        Placement placement,
                                        std::uint64_t seed = 0,
                                        double epsilon = 2.0) {
  if (n <= 0 || l <= 0) throw ConfigError("node and cluster sizes must be positive");
  if (A0 <= 0 || epsilon <= 0) throw ConfigError("A0 and epsilon must be positive");
  if (n % l != 0)
    throw NonDivisibleError("cluster size " + std::to_string(l) +
                            " does not divide node count " + std::to_string(n));
  NetworkLayout lay;
  lay.n = n;
  lay.m = n / l;
  lay.l_nominal = l;
  lay.A0 = A0;
  lay.epsilon = epsilon;
  lay.seed = seed;
  lay.placement = placement;
  const double side = std::sqrt(static_cast<double>(n) * A0);
  lay.region_w = lay.region_h = side;
  auto [r, c] = closest_factors(lay.m);
  lay.tiles_r = r;
  lay.tiles_c = c;

  lay.positions.reserve(n);
  lay.cluster_of.reserve(n);
  const double w = lay.tile_w(), h = lay.tile_h();
  for (int i = 0; i < lay.m; ++i) {
    const Eigen::Vector2d o = detail::tile_origin(lay, i);
    lay.ch_positions.push_back(o + Eigen::Vector2d(w / 2, h / 2));
    if (placement == Placement::RegularLattice) {
      auto [cols, rows] = detail::lattice_factors(l, w, h);
      const double cw = w / cols, ch = h / rows;
      for (int rr = 0; rr < rows; ++rr)
        for (int cc = 0; cc < cols; ++cc) {
          lay.positions.push_back(
              o + Eigen::Vector2d((cc + 0.5) * cw, (rr + 0.5) * ch));
          lay.cluster_of.push_back(i);
        }
    } else {
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i), /*tag=*/1));
      for (int k = 0; k < l; ++k) {
        lay.positions.push_back(
            o + Eigen::Vector2d(rng.uniform() * w, rng.uniform() * h));
        lay.cluster_of.push_back(i);
      }
    }
  }
  detail::finalize_members(lay);
  lay.validate();
  return lay;
}

struct PppConfig {
  double lambda = 1.0;  // nodes per unit area
  int nominal_n = 0;    // fixes the region area nominal_n*A0
  int nominal_l = 0;    // fixes the cluster tiling (m = nominal_n/nominal_l)
  std::uint64_t seed = 0;
};

// Homogeneous-PPP network over the fixed region: realized node count is
// Poisson(lambda*nominal_n*A0), positions i.i.d. uniform, cluster membership
// by containing tile.  Realized per-cluster counts vary and may be zero.
inline NetworkLayout sample_ppp_network(const PppConfig& cfg, int l, double A0,
                                        double epsilon = 2.0) {
  if (cfg.lambda <= 0) throw ConfigError("PPP intensity must be positive");
  if (cfg.nominal_n <= 0 || l <= 0)
    throw ConfigError("nominal node and cluster sizes must be positive");
  if (cfg.nominal_n % l != 0)
    throw NonDivisibleError("cluster size " + std::to_string(l) +
                            " does not divide nominal node count " +
                            std::to_string(cfg.nominal_n));
  NetworkLayout lay;
  lay.m = cfg.nominal_n / l;
  lay.l_nominal = l;
  lay.A0 = A0;
  lay.epsilon = epsilon;
  lay.seed = cfg.seed;
  lay.placement = Placement::UniformRandom;
  const double side = std::sqrt(static_cast<double>(cfg.nominal_n) * A0);
  lay.region_w = lay.region_h = side;
  auto [r, c] = closest_factors(lay.m);
  lay.tiles_r = r;
  lay.tiles_c = c;
  const double w = lay.tile_w(), h = lay.tile_h();
  for (int i = 0; i < lay.m; ++i)
    lay.ch_positions.push_back(detail::tile_origin(lay, i) +
                               Eigen::Vector2d(w / 2, h / 2));

  Rng rng(derive_seed(cfg.seed, 0, /*tag=*/2));
  const long count = rng.poisson(cfg.lambda * cfg.nominal_n * A0);
  if (count == 0) throw EmptyNetworkError("PPP realization drew zero nodes");

  // Draw in generation order, then renumber so node ids are cluster-contiguous.
  std::vector<std::pair<int, Eigen::Vector2d>> draws;
  draws.reserve(count);
  for (long k = 0; k < count; ++k) {
    const Eigen::Vector2d p(rng.uniform() * side, rng.uniform() * side);
    int col = std::min(lay.tiles_c - 1, static_cast<int>(p.x() / w));
    int row = std::min(lay.tiles_r - 1, static_cast<int>(p.y() / h));
    draws.emplace_back(row * lay.tiles_c + col, p);
  }
  std::stable_sort(draws.begin(), draws.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  lay.n = static_cast<int>(count);
  for (const auto& [ci, p] : draws) {
    lay.cluster_of.push_back(ci);
    lay.positions.push_back(p);
  }
  detail::finalize_members(lay);
  lay.validate();
  return lay;
}

// Path-loss amplitude gain a_k = max(d_min, ||x_k - x_CH||)^(-epsilon/2).
inline double path_loss_gain(const NetworkLayout& lay, int k) {
  const double d = std::max(lay.d_min(), lay.distance_to_ch(k));
  return std::pow(d, -lay.epsilon / 2.0);
}

// Worst-case node-to-CH distance for a square cluster of area l*A0 when the
// CH position inside the cell is unconstrained (corner-to-corner diagonal).
inline double max_intracluster_distance(int l, double A0) {
  if (l < 1 || A0 <= 0) throw ConfigError("invalid cluster size or area");
  return std::sqrt(2.0 * l * A0);
}

// Worst-case node-to-CH distance for the same square cluster when the CH sits
// at the centroid: half the diagonal.  This is the bound consistent with the
// centroid CH placement used everywhere in this library.
inline double centroid_max_distance(int l, double A0) {
  return 0.5 * max_intracluster_distance(l, A0);
}

// Realized maximum node-to-CH distance within cluster i (0 for empty clusters).
inline double realized_max_distance(const NetworkLayout& lay, int i) {
  double d = 0.0;
  for (int k : lay.members[i]) d = std::max(d, lay.distance_to_ch(k));
  return d;
}

// Realized maximum over all clusters.
inline double realized_max_distance(const NetworkLayout& lay) {
  double d = 0.0;
  for (int i = 0; i < lay.m; ++i) d = std::max(d, realized_max_distance(lay, i));
  return d;
}

// ---- serialization ---------------------------------------------------------
// CSV table (node_id, x, y, cluster_id) with 1-based ids, plus a one-object
// JSON header carrying the scalar fields needed to rebuild the tiling.

namespace detail {
inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace detail

inline std::string layout_json_header(const NetworkLayout& lay) {
  std::ostringstream os;
  os << "{\"n\": " << lay.n << ", \"m\": " << lay.m
     << ", \"l_nominal\": " << lay.l_nominal
     << ", \"A0\": " << detail::fmt_double(lay.A0)
     << ", \"epsilon\": " << detail::fmt_double(lay.epsilon)
     << ", \"seed\": " << lay.seed
     << ", \"placement\": \""
     << (lay.placement == Placement::RegularLattice ? "regular-lattice"
                                                    : "uniform-random")
     << "\"}";
  return os.str();
}

inline void write_layout_csv(const NetworkLayout& lay, std::ostream& os) {
  os << "node_id,x,y,cluster_id\n";
  for (int k = 0; k < lay.n; ++k)
    os << (k + 1) << ',' << detail::fmt_double(lay.positions[k].x()) << ','
       << detail::fmt_double(lay.positions[k].y()) << ','
       << (lay.cluster_of[k] + 1) << '\n';
}

inline void write_layout(const NetworkLayout& lay, const std::string& csv_path,
                         const std::string& json_path) {
  std::ofstream csv(csv_path);
  if (!csv) throw ConfigError("cannot open " + csv_path + " for writing");
  write_layout_csv(lay, csv);
  std::ofstream js(json_path);
  if (!js) throw ConfigError("cannot open " + json_path + " for writing");
  js << layout_json_header(lay) << '\n';
}

// Rebuilds a layout from the CSV table plus the scalar header fields.  The
// tiling is reconstructed from (n_nominal = m*l_nominal, A0); positions and
// cluster ids come from the table.
inline NetworkLayout read_layout(std::istream& csv, int m, int l_nominal,
                                 double A0, double epsilon, std::uint64_t seed,
                                 Placement placement) {
  NetworkLayout lay;
  lay.m = m;
  lay.l_nominal = l_nominal;
  lay.A0 = A0;
  lay.epsilon = epsilon;
  lay.seed = seed;
  lay.placement = placement;
  const double side = std::sqrt(static_cast<double>(m) * l_nominal * A0);
  lay.region_w = lay.region_h = side;
  auto [r, c] = closest_factors(m);
  lay.tiles_r = r;
  lay.tiles_c = c;
  const double w = lay.tile_w(), h = lay.tile_h();
  for (int i = 0; i < m; ++i)
    lay.ch_positions.push_back(detail::tile_origin(lay, i) +
                               Eigen::Vector2d(w / 2, h / 2));
  std::string line;
  if (!std::getline(csv, line) || line.rfind("node_id", 0) != 0)
    throw ConfigError("layout CSV missing header row");
  while (std::getline(csv, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string cell;
    long id;
    double x, y;
    int ci;
    std::getline(ls, cell, ',');
    id = std::stol(cell);
    std::getline(ls, cell, ',');
    x = std::stod(cell);
    std::getline(ls, cell, ',');
    y = std::stod(cell);
    std::getline(ls, cell, ',');
    ci = std::stoi(cell);
    if (id != static_cast<long>(lay.positions.size()) + 1)
      throw ConfigError("layout CSV node ids must be 1..n in order");
    if (ci < 1 || ci > m) throw ConfigError("layout CSV cluster id out of range");
    lay.positions.emplace_back(x, y);
    lay.cluster_of.push_back(ci - 1);
  }
  lay.n = static_cast<int>(lay.positions.size());
  if (lay.n == 0) throw EmptyNetworkError("layout CSV holds no nodes");
  detail::finalize_members(lay);
  lay.validate();
  return lay;
}

}  // namespace clusterdet
