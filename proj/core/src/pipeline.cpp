#include "ng4d/pipeline.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>

#include "ng4d/ops.hpp"
#include "ng4d/optim.hpp"

namespace ng4d {

Tensor sequence_loss(const Model& model, const Mode& mode) {
  const auto& cfg = model.config;
  const std::size_t frames = model.frames.size();
  std::vector<std::vector<std::size_t>> by_anchor(frames);
  for (std::size_t j = 0; j < frames; ++j) by_anchor[model.anchor_for(j)].push_back(j);
  const SinkhornOptions sk{.reg = cfg.sinkhorn_reg, .iterations = cfg.sinkhorn_iterations};
  std::vector<LossTerms> pairs;
  for (std::size_t a = 0; a < frames; ++a) {
    if (by_anchor[a].empty()) continue;
    std::vector<double> times;
    for (auto j : by_anchor[a]) times.push_back(model.frames[j].time);
    const auto preds = predict(model, a, times, mode);
    for (std::size_t q = 0; q < preds.size(); ++q) {
      const FrameState& target = model.frames[by_anchor[a][q]];
      const Tensor& pred = preds[q].points;
      LossTerms terms;
      terms.chamfer = chamfer_loss(pred, target.points_t);
      if (cfg.weights.emd > 0.0) {
        const auto emd_mode = emd_mode_for(pred.dim(0), target.points_t.dim(0), cfg.exact_emd_limit);
        terms.emd = emd_loss(pred, target.points_t, emd_mode, sk);
      }
      if (cfg.smoothness && cfg.weights.smooth > 0.0) {
        terms.smooth = smoothness_loss(preds[q].residual, model.frames[a].smooth_neighbors, cfg.smooth_k);
      }
      pairs.push_back(std::move(terms));
    }
  }
  return total_loss(pairs, cfg.weights);
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<std::vector<double>> snapshot(const std::vector<Tensor>& params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.emplace_back(p.values().begin(), p.values().end());
  return out;
}

}  // namespace

FitResult fit_model(Model model, const FitCallback& progress) {
  const auto t0 = Clock::now();
  FitResult r;
  r.model = std::move(model);
  const RunConfig& cfg = r.model.config;
  // Dropout draws from its own stream so the parameter init is unaffected.
  Rng dropout_rng(cfg.seed ^ 0x5bd1e995ULL);
  const Mode mode{true, cfg.dropout, &dropout_rng};

  std::vector<Tensor> candidates;
  for (auto& [name, t] : r.model.params.active(cfg.components)) candidates.push_back(t);
  std::vector<Tensor> trained;
  std::optional<AdamW> opt;
  std::vector<std::vector<double>> best;
  const auto total = static_cast<std::int64_t>(cfg.iterations);

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    Tensor loss;
    try {
      loss = sequence_loss(r.model, mode);
    } catch (const NumericalError& e) {
      throw NumericalError("iteration " + std::to_string(it) + ": " + e.what());
    }
    const double value = loss.item();
    r.loss_history.push_back(value);
    if (!r.best_iteration || value < r.best_loss) {
      r.best_iteration = it;
      r.best_loss = value;
      best = snapshot(candidates);
    }
    if (cfg.patience > 0 && it - *r.best_iteration >= cfg.patience) {
      r.stopped_early = true;
      break;
    }
    for (auto& p : candidates) p.clear_grad();
    backward(loss);
    if (!opt) {
      for (auto& p : candidates) {
        if (p.has_grad()) trained.push_back(p);
      }
      opt.emplace(trained, AdamWOptions{.lr = cfg.lr, .weight_decay = cfg.weight_decay});
    }
    const double lr = poly_lr(static_cast<std::int64_t>(it), total, cfg.lr, cfg.poly_power);
    opt->set_lr(lr);
    opt->step();
    if (progress) progress({it, value, lr});
  }
  if (r.best_iteration) {
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      std::copy(best[i].begin(), best[i].end(), candidates[i].mutable_values().begin());
    }
  }
  for (auto& p : candidates) p.clear_grad();
  r.held_out = evaluate_frames(r.model);
  r.wall_time_s = seconds_since(t0);
  return r;
}

FitResult fit_sequence(const Sequence& seq, const RunConfig& cfg, const FitCallback& progress) {
  const auto t0 = Clock::now();
  auto r = fit_model(build_model(seq, cfg), progress);
  r.wall_time_s = seconds_since(t0);
  return r;
}

std::vector<HeldOutMetrics> evaluate_frames(const Model& model) {
  std::vector<HeldOutMetrics> out;
  for (std::size_t j = 0; j < model.frames.size(); ++j) {
    const std::size_t a = model.anchor_for(j);
    const double t = model.frames[j].time;
    const auto pred = predict(model, a, std::span<const double>(&t, 1));
    const PointMatrix p = model.norm.from_unit(to_points(pred[0].points));
    const PointMatrix gt = model.norm.from_unit(model.frames[j].points);
    out.push_back({j, a, eval_metrics(p, gt)});
  }
  return out;
}

Interpolation interpolate(const Model& model, double t) {
  Interpolation r;
  r.anchor = model.nearest_frame(t);
  r.extrapolated = t < 0.0 || t > 1.0;
  const auto pred = predict(model, r.anchor, std::span<const double>(&t, 1));
  r.cloud = {model.norm.from_unit(to_points(pred[0].points)), model.to_raw_time(t)};
  return r;
}

PointMatrix scene_flow(const Model& model, double t1, double t2) {
  const double times[2] = {t1, t2};
  const auto pred = predict(model, model.nearest_frame(t1), times);
  return ((to_points(pred[1].points) - to_points(pred[0].points)) * model.norm.scale).eval();
}

PointMatrix flow_origin(const Model& model, double t1) {
  const auto pred = predict(model, model.nearest_frame(t1), std::span<const double>(&t1, 1));
  return model.norm.from_unit(to_points(pred[0].points));
}

PointCloud densify(const Model& model, const std::vector<double>& timestamps, std::size_t base_frame) {
  if (base_frame >= model.frames.size()) throw ParameterError("densify: base frame out of range");
  const FrameState& base = model.frames[base_frame];
  std::vector<PointMatrix> parts{base.points};
  std::size_t rows = base.points.rows();
  for (double t : timestamps) {
    if (!std::isfinite(t)) throw ParameterError("densify: timestamps must be finite");
    const auto pred = predict(model, model.nearest_frame(t), std::span<const double>(&base.time, 1));
    parts.push_back(to_points(pred[0].points));
    rows += parts.back().rows();
  }
  PointMatrix all(static_cast<Eigen::Index>(rows), 3);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    all.middleRows(at, p.rows()) = p;
    at += p.rows();
  }
  return {model.norm.from_unit(all), base.raw_time};
}

std::string metrics_json(const CloudMetrics& cloud, const std::optional<FlowMetrics>& flow, std::size_t iters,
                         double wall_time_s) {
  nlohmann::json j;
  j["cd"] = cloud.cd;
  j["emd"] = cloud.emd;
  j["emd_mode"] = cloud.emd_mode;
  j["epe3d"] = flow ? nlohmann::json(flow->epe3d) : nlohmann::json(nullptr);
  j["acc_s"] = flow ? nlohmann::json(flow->acc_s) : nlohmann::json(nullptr);
  j["acc_r"] = flow ? nlohmann::json(flow->acc_r) : nlohmann::json(nullptr);
  j["outliers"] = flow ? nlohmann::json(flow->outliers) : nlohmann::json(nullptr);
  j["iters"] = iters;
  j["wall_time_s"] = wall_time_s;
  return j.dump(2);
}

namespace {

constexpr std::uint32_t kFormatVersion = 1;

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_ += s;
  }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string bytes) : buf_(std::move(bytes)) {}
  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= std::uint64_t{static_cast<unsigned char>(buf_[pos_ + i])} << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(uint(4)); }
  std::uint64_t u64() { return uint(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::size_t n = u32();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw DataError("truncated model file at byte " + std::to_string(pos_));
  }
  std::string buf_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_model(const std::filesystem::path& path, const Model& model) {
  const std::string header = "NG4D";
  Writer body;
  body.u32(kFormatVersion);
  body.str(model.config.to_text());
  for (int c = 0; c < 3; ++c) body.f64(model.norm.center[c]);
  body.f64(model.norm.scale);
  body.u32(static_cast<std::uint32_t>(model.frames.size()));
  for (const auto& f : model.frames) {
    body.f64(f.time);
    body.f64(f.raw_time);
    body.u64(static_cast<std::uint64_t>(f.points.rows()));
    for (Eigen::Index i = 0; i < f.points.rows(); ++i)
      for (int c = 0; c < 3; ++c) body.f64(f.points(i, c));
  }
  const auto named = model.params.named();
  body.u32(static_cast<std::uint32_t>(named.size()));
  for (const auto& [name, t] : named) {
    body.str(name);
    body.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) body.u64(d);
    for (double v : t.values()) body.f64(v);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << header << body.bytes();
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  Reader r(ss.str());
  const std::string where = "'" + path.string() + "': ";
  try {
    if (r.raw(4) != "NG4D") throw DataError("not a model file");
    const auto version = r.u32();
    if (version != kFormatVersion) throw DataError("unsupported model format version " + std::to_string(version));
    const RunConfig cfg = RunConfig::from_text(r.str());
    Normalization norm;
    for (int c = 0; c < 3; ++c) norm.center[c] = r.f64();
    norm.scale = r.f64();
    const std::uint32_t frames = r.u32();
    std::vector<PointCloud> unit;
    std::vector<double> raw_times;
    for (std::uint32_t i = 0; i < frames; ++i) {
      PointCloud f;
      f.timestamp = r.f64();
      raw_times.push_back(r.f64());
      const auto n = r.u64();
      if (n > (std::uint64_t{1} << 32)) throw DataError("implausible frame size");
      f.points.resize(static_cast<Eigen::Index>(n), 3);
      for (Eigen::Index p = 0; p < f.points.rows(); ++p)
        for (int c = 0; c < 3; ++c) f.points(p, c) = r.f64();
      unit.push_back(std::move(f));
    }
    Model model = assemble_model(cfg, norm, std::move(unit), std::move(raw_times));
    std::map<std::string, Tensor> by_name;
    for (auto& [name, t] : model.params.named()) by_name.emplace(name, t);
    const std::uint32_t count = r.u32();
    if (count != by_name.size()) throw DataError("parameter count mismatch");
    for (std::uint32_t i = 0; i < count; ++i) {
      const std::string name = r.str();
      auto it = by_name.find(name);
      if (it == by_name.end()) throw DataError("unknown parameter '" + name + "'");
      Shape shape(r.u32());
      for (auto& d : shape) d = r.u64();
      if (shape != it->second.shape()) throw DataError("shape mismatch for parameter '" + name + "'");
      auto vals = it->second.mutable_values();
      for (auto& v : vals) v = r.f64();
    }
    if (!r.done()) throw DataError("trailing bytes after parameters");
    return model;
  } catch (const DataError& e) {
    throw DataError(where + e.what());
  } catch (const ParameterError& e) {
    throw DataError(where + "bad config echo: " + e.what());
  }
}

}  // namespace ng4d
