#include "fusionloc/eval/report.hpp"
#include "fusionloc/pipeline/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace fusionloc;
using nlohmann::json;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitNumerical = 3;

sim::Scenario scenario_from(const std::string& path, const std::optional<std::uint64_t>& seed) {
  sim::Scenario sc = sim::load_scenario(path);
  if (seed) sc.seed = *seed;
  return sc;
}

pipeline::PipelineConfig config_from(const std::string& flag) {
  std::string path = flag;
  if (path.empty())
    if (const char* env = std::getenv("FUSIONLOC_CONFIG")) path = env;
  if (path.empty()) return {};
  return pipeline::load_pipeline_config(path);
}

const eval::NavRecord& nearest(const std::vector<eval::NavRecord>& truth, double t) {
  auto it = std::lower_bound(truth.begin(), truth.end(), t, [](const eval::NavRecord& r, double v) { return r.t < v; });
  if (it == truth.end()) return truth.back();
  if (it != truth.begin() && t - std::prev(it)->t < it->t - t) return *std::prev(it);
  return *it;
}

/// Survey route: accumulate the dataset's scans at their true poses.
map::LidarMap map_from_dataset(const sim::Dataset& d) {
  if (d.truth.empty()) fail(ErrorKind::input, "dataset has no truth trajectory");
  map::RasterParams params = pipeline::PipelineConfig{}.localizer.raster;
  params.resolution = d.scenario.world.resolution;
  map::MapAccumulator acc(params, d.scenario.world.tile_dimension);
  for (const map::Scan& s : d.scans) {
    const eval::NavRecord& n = nearest(d.truth, s.t);
    if (std::abs(n.t - s.t) > eval::kAlignmentTolerance) fail(ErrorKind::input, "no truth pose for scan");
    acc.accumulate_scan(s.points, {n.xy.x(), n.xy.y(), n.r.z(), n.euler.roll, n.euler.pitch, n.euler.heading});
  }
  return map::finalize_map(acc);
}

int build_map(const std::string& scenario, const std::string& dataset, const std::optional<std::uint64_t>& seed,
              const fs::path& out) {
  map::LidarMap m;
  if (!dataset.empty()) {
    m = map_from_dataset(sim::load_dataset(dataset));
  } else {
    sim::Simulation s(scenario_from(scenario, seed));
    m = s.generate_world().before;
  }
  map::save_map(m, out);
  std::cout << "map: " << m.grid().tile_count() << " tiles, " << m.occupied_cells() << " cells -> " << out.string()
            << '\n';
  return 0;
}

int simulate(const std::string& scenario, const std::optional<std::uint64_t>& seed, const fs::path& out) {
  sim::Simulation s(scenario_from(scenario, seed));
  const sim::Dataset d = s.run(s.generate_world());
  sim::save_dataset(d, out);
  std::cout << "dataset: " << d.imu.size() << " imu, " << d.scans.size() << " scans, " << d.gnss.size()
            << " gnss epochs -> " << out.string() << '\n';
  return 0;
}

int localize(const fs::path& dataset, const std::string& map_dir, const std::string& mode_str,
             const std::string& config, const fs::path& out) {
  const pipeline::Mode mode = pipeline::parse_mode(mode_str);
  const pipeline::PipelineConfig cfg = config_from(config);
  const sim::Dataset d = sim::load_dataset(dataset);
  std::optional<map::LidarMap> m;
  if (mode != pipeline::Mode::gnss_only) {
    if (map_dir.empty()) fail(ErrorKind::input, "--map is required for mode " + mode_str);
    m = map::load_map(map_dir);
  }
  const pipeline::Pipeline p(m ? &*m : nullptr, cfg);
  const pipeline::PipelineResult r = p.run(d, mode);
  fs::create_directories(out);
  eval::save_trajectory((out / "trajectory.csv").string(), r.trajectory);
  pipeline::save_measurement_log((out / "measurements.csv").string(), r.log);
  pipeline::save_lidar_fixes((out / "lidar_fixes.csv").string(), r.lidar);
  pipeline::save_gnss_fixes((out / "gnss_fixes.csv").string(), r.gnss);
  std::cout << pipeline::mode_name(mode) << ": " << r.trajectory.size() << " epochs in " << r.seconds << " s -> "
            << out.string() << '\n';
  return 0;
}

int evaluate(const std::string& trajectory, const std::string& truth, const fs::path& out) {
  const eval::EvaluationReport rep = eval::evaluate(eval::load_trajectory(trajectory), eval::load_trajectory(truth));
  fs::create_directories(out);
  eval::save_epoch_errors((out / "epoch_errors.csv").string(), rep.epochs);
  const json j = eval::report_json(rep);
  {
    std::ofstream os(out / "report.json");
    if (!os) fail(ErrorKind::input, "cannot write " + (out / "report.json").string());
    os << j.dump(2) << '\n';
  }
  const eval::Aggregates& a = rep.all;
  std::printf("%-10s %-10s %-10s %-10s %-10s\n", "Horiz.RMS", "Horiz.Max", "Long.RMS", "Lat.RMS", "<0.3m");
  std::printf("%-10.3f %-10.3f %-10.3f %-10.3f %.2f%%\n", a.horiz_rms, a.horiz_max, a.long_rms, a.lat_rms,
              100.0 * a.below_30cm);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LiDAR / GNSS / IMU localization toolkit"};
  app.require_subcommand(1);

  std::string scenario, dataset, map_dir, mode = "3sys", config, trajectory, truth, out;
  std::optional<std::uint64_t> seed;

  auto* bm = app.add_subcommand("build-map", "Build a map from a scenario's world or a dataset's scans");
  auto* bm_src = bm->add_option_group("source");
  bm_src->add_option("--scenario", scenario, "Scenario JSON")->check(CLI::ExistingFile);
  bm_src->add_option("--dataset", dataset, "Dataset directory (scans at true poses)")->check(CLI::ExistingDirectory);
  bm_src->require_option(1);
  bm->add_option("--seed", seed, "Override the scenario seed");
  bm->add_option("--out", out, "Map directory")->required();

  auto* sm = app.add_subcommand("simulate", "Simulate a dataset from a scenario");
  sm->add_option("--scenario", scenario, "Scenario JSON")->required()->check(CLI::ExistingFile);
  sm->add_option("--seed", seed, "Override the scenario seed");
  sm->add_option("--out", out, "Dataset directory")->required();

  auto* lo = app.add_subcommand("localize", "Replay a dataset through the localization pipeline");
  lo->add_option("--dataset", dataset, "Dataset directory")->required();
  lo->add_option("--map", map_dir, "Map directory");
  lo->add_option("--mode", mode, "2sys, 3sys, lidar-only, gnss-only, intensity-only, heading-off, fixed-gamma");
  lo->add_option("--config", config, "Pipeline config JSON (default: $FUSIONLOC_CONFIG)");
  lo->add_option("--out", out, "Output directory")->required();

  auto* ev = app.add_subcommand("evaluate", "Compare a trajectory with ground truth");
  ev->add_option("--trajectory", trajectory, "Estimated trajectory CSV")->required();
  ev->add_option("--truth", truth, "Truth trajectory CSV")->required();
  ev->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitInput;
  }

  try {
    if (*bm) return build_map(scenario, dataset, seed, out);
    if (*sm) return simulate(scenario, seed, out);
    if (*lo) return localize(dataset, map_dir, mode, config, out);
    if (*ev) return evaluate(trajectory, truth, out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.kind() == ErrorKind::numerical ? kExitNumerical : kExitInput;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  }
  return 0;
}
