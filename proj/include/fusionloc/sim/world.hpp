#pragma once

#include "fusionloc/map/lidar_map.hpp"
#include "fusionloc/sim/trajectory.hpp"

#include <boost/math/distributions/normal.hpp>

#include <complex>
#include <set>

namespace fusionloc::sim {

/// Sum of random plane waves with wave vectors drawn from N(0, 1/l^2) per
/// axis. Its expected autocorrelation is sigma^2 exp(-r^2 / (2 l^2)).
class WaveField {
 public:
  WaveField() = default;
  WaveField(std::uint64_t seed, std::string_view stream, int n, double corr_length, double sigma) {
    CounterRng rng(seed, CounterRng::stream_id(stream));
    const double amp = sigma * std::sqrt(2.0 / n);
    for (int i = 0; i < n; ++i) {
      Wave w;
      w.k = Vec2(rng.gaussian(), rng.gaussian()) / corr_length;
      w.phase = rng.uniform(0.0, 2.0 * kPi);
      w.amp = amp;
      waves_.push_back(w);
    }
  }

  double operator()(const Vec2& p) const {
    double s = 0.0;
    for (const auto& w : waves_) s += w.amp * std::cos(w.k.dot(p) + w.phase);
    return s;
  }

  /// Values on the lattice (x0 + i res, y0 + j res), row-major in j, using
  /// separable complex exponentials.
  std::vector<double> lattice(double x0, double y0, double res, int nx, int ny) const {
    std::vector<double> out(static_cast<std::size_t>(nx) * ny, 0.0);
    std::vector<std::complex<double>> cx(nx), cy(ny);
    for (const auto& w : waves_) {
      for (int i = 0; i < nx; ++i) cx[i] = std::polar(w.amp, w.k.x() * (x0 + i * res) + w.phase);
      for (int j = 0; j < ny; ++j) cy[j] = std::polar(1.0, w.k.y() * (y0 + j * res));
      for (int j = 0; j < ny; ++j) {
        double* row = out.data() + static_cast<std::size_t>(j) * nx;
        const double cr = cy[j].real(), ci = cy[j].imag();
        for (int i = 0; i < nx; ++i) row[i] += cx[i].real() * cr - cx[i].imag() * ci;
      }
    }
    return out;
  }

 private:
  struct Wave {
    Vec2 k;
    double phase;
    double amp;
  };
  std::vector<Wave> waves_;
};

struct WorldMaps {
  map::LidarMap before;   // what the mapping vehicle recorded
  map::LidarMap changes;  // post-change cells inside change regions only
};

/// Road corridor along the path: textured asphalt with lane markings,
/// raised sidewalks behind curbs, wall segments and bollards, plus change
/// regions that repave patches, repaint markings and add a wall.
class World {
 public:
  World(const Scenario& sc, const Path& path, const Terrain& terrain)
      : spec_(sc.world),
        lidar_(sc.lidar),
        seed_(sc.seed),
        path_(&path),
        terrain_(&terrain),
        texture_(sc.seed, "texture", sc.world.texture_waves, sc.world.correlation_length, sc.world.texture_sigma),
        var_field_(sc.seed, "variance", 16, 2.0, 1.0) {
    for (std::size_t i = 0; i < spec_.changes.size(); ++i) {
      const ChangeSpec& c = spec_.changes[i];
      const std::string tag = "change" + std::to_string(i);
      blobs_.emplace_back(sc.seed, tag + "_blob", 48, c.blob_scale, 1.0);
      fresh_.emplace_back(sc.seed, tag + "_texture", sc.world.texture_waves, sc.world.correlation_length, 1.0);
      const boost::math::normal n01;
      thresholds_.push_back(c.decorrelation <= 0.0   ? std::numeric_limits<double>::infinity()
                            : c.decorrelation >= 1.0 ? -std::numeric_limits<double>::infinity()
                                                     : boost::math::quantile(n01, 1.0 - c.decorrelation));
    }
    CounterRng rng(seed_, CounterRng::stream_id("walls"));
    wall_phase_[0] = rng.uniform(0.0, spec_.wall_period);
    wall_phase_[1] = rng.uniform(0.0, spec_.wall_period);
  }

  const WorldSpec& spec() const { return spec_; }

  /// Index of the change region containing arc length s, or -1.
  int change_region(double s) const {
    for (std::size_t i = 0; i < spec_.changes.size(); ++i)
      if (s >= spec_.changes[i].s_start && s <= spec_.changes[i].s_end) return static_cast<int>(i);
    return -1;
  }

  /// Cell contents at map point p with path coordinate pc. `texture` and
  /// `var` are the precomputed unit fields at p; `region` selects the
  /// post-change appearance.
  map::GridCellStats cell(const Vec2& p, const PathCoord& pc, double texture, double var, int region) const {
    const WorldSpec& w = spec_;
    const double ad = std::abs(pc.d);
    const bool road = ad <= w.road_half_width;
    double intensity = (road ? w.road_intensity : w.sidewalk_intensity) + texture;
    double alt = terrain_->height(p);
    const ChangeSpec* ch = region >= 0 ? &spec_.changes[static_cast<std::size_t>(region)] : nullptr;
    bool repaved = false;
    if (ch && blobs_[static_cast<std::size_t>(region)](p) > thresholds_[static_cast<std::size_t>(region)]) {
      repaved = true;
      intensity = ch->new_intensity + ch->new_contrast * fresh_[static_cast<std::size_t>(region)](p);
    }
    if (road && !repaved && marking(pc.s, pc.d)) intensity += w.marking_intensity;
    if (ch && ch->marking_shift != 0.0 && road && marking(pc.s, pc.d - ch->marking_shift))
      intensity = w.road_intensity + w.marking_intensity;
    if (w.relief) {
      if (!road) alt += w.curb_height;
      alt += feature_height(pc);
      if (ch && ch->new_wall && pc.d >= ch->new_wall_offset && pc.d < ch->new_wall_offset + 0.3)
        alt = terrain_->height(p) + w.wall_height;
    }
    map::GridCellStats s;
    s.intensity_mean = static_cast<float>(std::clamp(intensity, 0.0, 255.0));
    s.intensity_var = static_cast<float>(square(lidar_.sigma_intensity) * std::exp(w.variance_structure * var));
    s.altitude_mean = static_cast<float>(alt);
    s.altitude_var = static_cast<float>(std::max(square(lidar_.sigma_altitude), 1e-6));
    s.sample_count = 1;
    return s;
  }

  WorldMaps generate() const {
    WorldMaps out;
    out.before = map::LidarMap(rasterize(false));
    out.changes = map::LidarMap(rasterize(true));
    return out;
  }

 private:
  bool marking(double s, double d) const {
    const WorldSpec& w = spec_;
    const double hw = 0.5 * w.marking_width;
    const double edge = w.road_half_width - 0.3;
    if (std::abs(std::abs(d) - edge) < hw) return true;
    if (std::abs(d) < hw) {
      const double period = w.dash_length + w.dash_gap;
      double m = std::fmod(s, period);
      if (m < 0.0) m += period;
      return m < w.dash_length;
    }
    return false;
  }

  double feature_height(const PathCoord& pc) const {
    const WorldSpec& w = spec_;
    const int side = pc.d >= 0.0 ? 0 : 1;
    const double ad = std::abs(pc.d);
    if (ad >= w.wall_offset && ad < w.wall_offset + 0.3) {
      double m = std::fmod(pc.s + wall_phase_[side], w.wall_period);
      if (m < 0.0) m += w.wall_period;
      if (m < w.wall_duty * w.wall_period) return w.wall_height;
    }
    if (w.bollard_spacing > 0.0 && std::abs(ad - w.bollard_offset) < 0.1875) {
      const CounterRng rng(seed_, CounterRng::stream_id("bollards"));
      const auto k = static_cast<std::int64_t>(std::floor(pc.s / w.bollard_spacing));
      for (std::int64_t q = k - 1; q <= k + 1; ++q) {
        const auto ctr = static_cast<std::uint64_t>(2 * (q + (1LL << 40)) + side);
        const double center = (static_cast<double>(q) + 0.5 + 0.5 * (rng.uniform_at(ctr) - 0.5)) * w.bollard_spacing;
        if (std::abs(pc.s - center) < 0.1875) return w.bollard_height;
      }
    }
    return 0.0;
  }

  map::TiledGrid<map::GridCellStats> rasterize(bool changed) const {
    const WorldSpec& w = spec_;
    map::TiledGrid<map::GridCellStats> grid(w.resolution, w.tile_dimension);
    const double tile_m = w.resolution * w.tile_dimension;
    const double len = path_->length();

    struct Station {
      double s;
      Vec2 p;
    };
    std::vector<Station> stations;
    for (double s = -w.corridor; s <= len + w.corridor + 1e-9; s += 2.0) {
      if (changed && change_region(s) < 0) {
        bool near = false;
        for (const auto& c : w.changes) near |= s >= c.s_start - 2.0 && s <= c.s_end + 2.0;
        if (!near) continue;
      }
      stations.push_back({s, path_->position(s)});
    }
    std::set<map::TileIndex> tiles;
    for (const auto& st : stations) {
      const auto lo = grid.tile_of(grid.cell_of(st.p - Vec2::Constant(w.corridor + 1.0)));
      const auto hi = grid.tile_of(grid.cell_of(st.p + Vec2::Constant(w.corridor + 1.0)));
      for (int ty = lo.y; ty <= hi.y; ++ty)
        for (int tx = lo.x; tx <= hi.x; ++tx) tiles.insert({tx, ty});
    }

    const int dim = static_cast<int>(w.tile_dimension);
    const double reach = w.corridor + 0.75 * tile_m + 2.0;
    for (const map::TileIndex& ti : tiles) {
      const Vec2 origin(ti.x * tile_m, ti.y * tile_m);
      const Vec2 center = origin + Vec2::Constant(0.5 * tile_m);
      std::vector<const Station*> cand;
      for (const auto& st : stations)
        if ((st.p - center).norm() < reach) cand.push_back(&st);
      if (cand.empty()) continue;
      const double x0 = origin.x() + 0.5 * w.resolution, y0 = origin.y() + 0.5 * w.resolution;
      const std::vector<double> tex = texture_.lattice(x0, y0, w.resolution, dim, dim);
      const std::vector<double> var = var_field_.lattice(x0, y0, w.resolution, dim, dim);

      map::Tile<map::GridCellStats> tile;
      tile.index = ti;
      tile.resolution = w.resolution;
      tile.dimension = w.tile_dimension;
      tile.cells.assign(static_cast<std::size_t>(dim) * dim, map::GridCellStats{});
      bool any = false;
      for (int j = 0; j < dim; ++j)
        for (int i = 0; i < dim; ++i) {
          const Vec2 p(x0 + i * w.resolution, y0 + j * w.resolution);
          const Station* best = nullptr;
          double bd = std::numeric_limits<double>::infinity();
          for (const Station* st : cand) {
            const double d2 = (st->p - p).squaredNorm();
            if (d2 < bd) {
              bd = d2;
              best = st;
            }
          }
          if (bd > square(w.corridor + 2.0)) continue;
          const PathCoord pc = path_->project(p, best->s);
          if (std::abs(pc.d) > w.corridor || pc.s < -w.corridor || pc.s > len + w.corridor) continue;
          const int region = change_region(pc.s);
          if (changed && region < 0) continue;
          const std::size_t k = static_cast<std::size_t>(j) * dim + i;
          tile.cells[k] = cell(p, pc, tex[k], var[k], changed ? region : -1);
          any = true;
        }
      if (any) grid.insert_tile(std::move(tile));
    }
    return grid;
  }

  WorldSpec spec_;
  LidarSpec lidar_;
  std::uint64_t seed_;
  const Path* path_;
  const Terrain* terrain_;
  WaveField texture_;
  WaveField var_field_;
  std::vector<WaveField> blobs_;
  std::vector<WaveField> fresh_;
  std::vector<double> thresholds_;
  double wall_phase_[2] = {0.0, 0.0};
};

}  // namespace fusionloc::sim
