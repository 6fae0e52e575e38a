#include "cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "ng4d/gradcheck.hpp"
#include "ng4d/parallel.hpp"
#include "ng4d/pipeline.hpp"

namespace ng4d::cli {
namespace {

// Flags shared by the subcommands that build a model from a configuration.
struct ConfigFlags {
  std::string config_path;
  std::string preset = "object";
  std::size_t points = 0, gaussians = 0, iters = 0, outlier_k = 0;
  std::uint64_t seed = 0;
  double outlier_std = 0.0;
  bool no_smooth = false, smooth = false;
  std::vector<std::string> ablate;
  std::string fusion;
  CLI::Option *points_opt = nullptr, *gaussians_opt = nullptr, *iters_opt = nullptr, *seed_opt = nullptr,
              *outlier_k_opt = nullptr, *outlier_std_opt = nullptr;

  void add(CLI::App& app) {
    app.add_option("--config", config_path, "key = value configuration file, applied before flags");
    app.add_option("--preset", preset, "object (1024 points, 8 Gaussians) or lidar (8192, 16, smoothness)")
        ->check(CLI::IsMember({"object", "lidar"}));
    points_opt = app.add_option("--points", points, "points sampled per frame");
    gaussians_opt = app.add_option("--gaussians", gaussians, "Gaussians per frame");
    iters_opt = app.add_option("--iters", iters, "optimization iterations");
    seed_opt = app.add_option("--seed", seed, "random seed");
    app.add_flag("--no-smooth", no_smooth, "disable the flow smoothness term");
    app.add_flag("--smooth", smooth, "enable the flow smoothness term");
    outlier_k_opt = app.add_option("--outlier-k", outlier_k, "enable outlier removal with this many neighbours");
    outlier_std_opt = app.add_option("--outlier-std", outlier_std, "enable outlier removal with this std ratio");
    app.add_option("--ablate", ablate, "disable a component (repeatable); dependants are disabled with it")
        ->check(CLI::IsMember({"neural_field", "gauss_pc", "t_rbf_gr", "deformation", "fusion"}));
    app.add_option("--fusion", fusion, "feature fusion: cat, attn or off")
        ->check(CLI::IsMember({"cat", "attn", "attention", "off"}));
  }

  RunConfig resolve() const {
    RunConfig c = RunConfig::preset(preset == "lidar" ? Preset::Lidar : Preset::Object);
    if (!config_path.empty()) c = RunConfig::load(config_path, c);
    if (points_opt->count()) c.points_per_frame = points;
    if (gaussians_opt->count()) c.gaussians = gaussians;
    if (iters_opt->count()) c.iterations = iters;
    if (seed_opt->count()) c.seed = seed;
    if (no_smooth && smooth) throw ParameterError("--smooth and --no-smooth are exclusive");
    if (no_smooth) c.smoothness = false;
    if (smooth) c.smoothness = true;
    if (outlier_k_opt->count()) {
      c.outlier_removal = true;
      c.outlier_k = outlier_k;
    }
    if (outlier_std_opt->count()) {
      c.outlier_removal = true;
      c.outlier_std = outlier_std;
    }
    auto& comp = c.components;
    for (const auto& a : ablate) {
      if (a == "neural_field") {
        comp.neural_field = false;
        comp.fusion = FusionMode::Off;
      } else if (a == "gauss_pc") {
        comp.gauss_pc = comp.t_rbf_gr = comp.deformation = false;
        comp.fusion = FusionMode::Off;
      } else if (a == "t_rbf_gr") {
        comp.t_rbf_gr = false;
      } else if (a == "deformation") {
        comp.deformation = false;
      } else {
        comp.fusion = FusionMode::Off;
      }
    }
    if (!fusion.empty()) comp.fusion = parse_fusion(fusion);
    c.validate();
    return c;
  }
};

void require_writable_json(const std::string& path, const std::string& json) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write '" + path + "'");
  f << json << '\n';
  if (!f) throw DataError("failed writing '" + path + "'");
}

// Rows of "fx fy fz" or "x y z fx fy fz"; the last three columns are the flow.
PointMatrix load_flow(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::vector<double> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    std::istringstream ls(line);
    std::vector<double> v;
    for (double x; ls >> x;) v.push_back(x);
    if (!ls.eof() || (v.size() != 3 && v.size() != 6)) {
      throw DataError(path + ": line " + std::to_string(line_no) + ": expected 3 or 6 numbers");
    }
    rows.insert(rows.end(), v.end() - 3, v.end());
  }
  PointMatrix m(static_cast<Eigen::Index>(rows.size() / 3), 3);
  std::copy(rows.begin(), rows.end(), m.data());
  return m;
}

void warn_extrapolation(std::ostream& err, double t, const Model& m) {
  if (t < 0.0 || t > 1.0) {
    err << "warning: t = " << t << " lies outside [0, 1]; extrapolating from frame " << m.nearest_frame(t) << '\n';
  }
}

CloudMetrics mean_held_out(const std::vector<HeldOutMetrics>& held) {
  CloudMetrics m;
  for (const auto& h : held) {
    m.cd += h.metrics.cd / static_cast<double>(held.size());
    m.emd += h.metrics.emd / static_cast<double>(held.size());
    m.emd_mode = h.metrics.emd_mode;
  }
  return m;
}

FitCallback progress_printer(std::ostream& err, bool quiet) {
  if (quiet) return {};
  return [&err](const FitProgress& p) {
    if (p.iteration % 100 == 0) err << "iter " << p.iteration << "  loss " << p.loss << "  lr " << p.lr << '\n';
  };
}

int cmd_fit(const std::vector<std::string>& frames, const std::vector<double>& times, const ConfigFlags& flags,
            const std::string& out_path, const std::string& metrics_path, bool quiet, std::ostream& out,
            std::ostream& err) {
  const RunConfig cfg = flags.resolve();
  if (!times.empty() && times.size() != frames.size()) {
    throw ParameterError("--times has " + std::to_string(times.size()) + " values for " +
                         std::to_string(frames.size()) + " frames");
  }
  Sequence seq;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    seq.frames.push_back(load_cloud(frames[i], std::nullopt, times.empty() ? static_cast<double>(i) : times[i]));
  }
  const FitResult r = fit_sequence(seq, cfg, progress_printer(err, quiet));
  save_model(out_path, r.model);
  const CloudMetrics held = mean_held_out(r.held_out);
  out << "iterations " << r.loss_history.size() << "  best " << (r.best_iteration ? *r.best_iteration : 0)
      << "  loss " << r.best_loss << "  held-out cd " << held.cd << "  emd " << held.emd << "  "
      << r.wall_time_s << " s\n";
  if (!metrics_path.empty()) {
    require_writable_json(metrics_path, metrics_json(held, std::nullopt, r.loss_history.size(), r.wall_time_s));
  }
  return kOk;
}

// Synthetic constant-velocity scene: three blobs moved by 0.3 x diagonal.
struct Synthetic {
  PointMatrix base;
  Eigen::RowVector3d velocity;
  Sequence seq;
};

Synthetic synthetic_scene(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  const Eigen::RowVector3d centers[3] = {{0, 0, 0}, {1, 0.2, 0}, {0.4, 0.8, 0.3}};
  Synthetic s;
  s.base.resize(static_cast<Eigen::Index>(n), 3);
  for (Eigen::Index i = 0; i < s.base.rows(); ++i) {
    for (int a = 0; a < 3; ++a) s.base(i, a) = centers[i % 3][a] + 0.15 * rng.normal();
  }
  const double diag = (s.base.colwise().maxCoeff() - s.base.colwise().minCoeff()).norm();
  s.velocity = Eigen::RowVector3d::Constant(0.3 * diag / std::sqrt(3.0));
  for (int k = 0; k < 4; ++k) s.seq.frames.push_back({(s.base.rowwise() + s.velocity * (k / 3.0)).eval(), 1.0 * k});
  return s;
}

int cmd_bench(const ConfigFlags& flags, const std::string& metrics_path, bool quiet, std::ostream& out,
              std::ostream& err) {
  RunConfig cfg = flags.resolve();
  if (!flags.points_opt->count()) cfg.points_per_frame = 256;
  if (!flags.iters_opt->count()) cfg.iterations = 100;
  cfg.validate();
  const Synthetic s = synthetic_scene(cfg.points_per_frame, cfg.seed);
  const FitResult r = fit_sequence(s.seq, cfg, progress_printer(err, quiet));
  const auto in = interpolate(r.model, 0.5);
  const CloudMetrics cloud = eval_metrics(in.cloud.points, (s.base.rowwise() + 0.5 * s.velocity).eval());
  const PointMatrix flow = scene_flow(r.model, 1.0 / 3.0, 2.0 / 3.0);
  PointMatrix truth(flow.rows(), 3);
  truth.rowwise() = s.velocity / 3.0;
  const FlowMetrics fm = flow_metrics(flow, truth);
  const double per_iter = r.loss_history.empty() ? 0.0 : r.wall_time_s / static_cast<double>(r.loss_history.size());
  out << "threads " << thread_count() << "  points " << cfg.points_per_frame << "  gaussians " << cfg.gaussians
      << "  iterations " << r.loss_history.size() << "  " << 1e3 * per_iter << " ms/iter\n"
      << "t=0.5 cd " << cloud.cd << "  emd " << cloud.emd << "  flow epe3d " << fm.epe3d << '\n';
  if (!metrics_path.empty()) {
    require_writable_json(metrics_path, metrics_json(cloud, fm, r.loss_history.size(), r.wall_time_s));
  }
  return kOk;
}

int cmd_gradcheck(std::uint64_t seed, std::ostream& out) {
  const auto rep = run_gradcheck(seed);
  char line[256];
  for (const auto& c : rep.cases) {
    std::snprintf(line, sizeof line, "%-18s max rel %.3e  checked %5zu  kinks %3zu  wide-step %.3e\n",
                  c.name.c_str(), c.max_rel, c.checked, c.kinks, c.max_rel_wide);
    out << line;
  }
  std::snprintf(line, sizeof line, "max rel err %.3e over %zu entries (%.1f s)\n", rep.max_rel(), rep.checked(),
                rep.seconds);
  out << line;
  return rep.passed() ? kOk : kNumerical;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Continuous-time point-cloud interpolation", "ng4d"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "expand all help");

  std::string out_path, metrics_path, model_path, gt_path;
  bool quiet = false;

  auto* fit = app.add_subcommand("fit", "fit a model to a frame sequence");
  ConfigFlags fit_flags;
  fit_flags.add(*fit);
  std::vector<std::string> frames;
  std::vector<double> times;
  fit->add_option("--frames", frames, "input frames (.ply, .xyz)")->required()->expected(2, 1 << 20);
  fit->add_option("--times", times, "frame timestamps; defaults to 0, 1, 2, ...");
  fit->add_option("--out", out_path, "model file to write")->required();
  fit->add_option("--metrics-json", metrics_path, "held-out metrics JSON");
  fit->add_flag("--quiet", quiet, "no progress output");

  auto* interp = app.add_subcommand("interp", "predict the cloud at a normalized time");
  double t = 0.0;
  interp->add_option("--model", model_path, "model file")->required();
  interp->add_option("--t", t, "normalized time; outside [0, 1] extrapolates")->required();
  interp->add_option("--out", out_path, "output cloud (.ply, .xyz)")->required();
  interp->add_option("--gt", gt_path, "ground-truth cloud for metrics");
  interp->add_option("--metrics-json", metrics_path, "metrics JSON (needs --gt)");

  auto* flow = app.add_subcommand("flow", "per-point scene flow between two normalized times");
  double t1 = 0.0, t2 = 0.0;
  flow->add_option("--model", model_path, "model file")->required();
  flow->add_option("--t1", t1, "source time")->required();
  flow->add_option("--t2", t2, "target time")->required();
  flow->add_option("--out", out_path, "flow dump, one 'x y z fx fy fz' line per point")->required();
  flow->add_option("--gt", gt_path, "ground-truth flow ('fx fy fz' or 'x y z fx fy fz' rows)");
  flow->add_option("--metrics-json", metrics_path, "metrics JSON (needs --gt)");

  auto* dens = app.add_subcommand("densify", "merge frames carried to a base frame's time");
  std::vector<double> dens_times;
  std::size_t base = 0;
  dens->add_option("--model", model_path, "model file")->required();
  dens->add_option("--times", dens_times, "normalized timestamps whose nearest frames are merged")->required();
  dens->add_option("--base", base, "base frame index");
  dens->add_option("--out", out_path, "output cloud (.ply, .xyz)")->required();
  dens->add_option("--gt", gt_path, "dense ground-truth cloud for metrics");
  dens->add_option("--metrics-json", metrics_path, "metrics JSON (needs --gt)");

  auto* bench = app.add_subcommand("bench", "time a fit on a synthetic constant-velocity scene");
  ConfigFlags bench_flags;
  bench_flags.add(*bench);
  bench->add_option("--metrics-json", metrics_path, "metrics JSON");
  bench->add_flag("--quiet", quiet, "no progress output");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every gradient");
  std::uint64_t grad_seed = 7;
  grad->add_option("--seed", grad_seed, "scene and sampling seed");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    const bool wants_metrics = !metrics_path.empty();
    if ((interp->parsed() || flow->parsed() || dens->parsed()) && wants_metrics && gt_path.empty()) {
      throw ParameterError("--metrics-json needs --gt");
    }
    if (fit->parsed()) return cmd_fit(frames, times, fit_flags, out_path, metrics_path, quiet, out, err);
    if (bench->parsed()) return cmd_bench(bench_flags, metrics_path, quiet, out, err);
    if (grad->parsed()) return cmd_gradcheck(grad_seed, out);

    const Model model = load_model(model_path);
    if (interp->parsed()) {
      warn_extrapolation(err, t, model);
      const auto in = interpolate(model, t);
      save_cloud(out_path, in.cloud, format_from_path(out_path));
      out << "frame " << in.anchor << " -> t = " << t << ": " << in.cloud.size() << " points\n";
      if (wants_metrics) {
        const auto gt = load_cloud(gt_path);
        require_writable_json(metrics_path, metrics_json(eval_metrics(in.cloud.points, gt.points), std::nullopt,
                                                         model.config.iterations, 0.0));
      }
    } else if (flow->parsed()) {
      warn_extrapolation(err, t2, model);
      const PointMatrix f = scene_flow(model, t1, t2);
      const PointMatrix origin = flow_origin(model, t1);
      save_flow_xyz(out_path, origin, f);
      out << f.rows() << " flow vectors, mean |f| " << f.rowwise().norm().mean() << '\n';
      if (wants_metrics) {
        const PointMatrix gt = load_flow(gt_path);
        if (gt.rows() != f.rows()) {
          throw DataError(gt_path + ": " + std::to_string(gt.rows()) + " flow rows for " +
                          std::to_string(f.rows()) + " points");
        }
        const CloudMetrics cloud = eval_metrics((origin + f).eval(), (origin + gt).eval());
        require_writable_json(metrics_path,
                              metrics_json(cloud, flow_metrics(f, gt), model.config.iterations, 0.0));
      }
    } else {
      for (double s : dens_times) warn_extrapolation(err, s, model);
      const PointCloud d = densify(model, dens_times, base);
      save_cloud(out_path, d, format_from_path(out_path));
      out << d.size() << " points at frame " << base << '\n';
      if (wants_metrics) {
        const auto gt = load_cloud(gt_path);
        require_writable_json(metrics_path, metrics_json(eval_metrics(d.points, gt.points), std::nullopt,
                                                         model.config.iterations, 0.0));
      }
    }
    return kOk;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const ParameterError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kData;
  }
}

}  // namespace ng4d::cli

int cli_main(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return ng4d::cli::run(args, std::cout, std::cerr);
}
