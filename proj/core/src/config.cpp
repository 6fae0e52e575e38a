#include "ng4d/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace ng4d {

std::string_view fusion_name(FusionMode mode) {
  switch (mode) {
    case FusionMode::Cat:
      return "cat";
    case FusionMode::Attention:
      return "attn";
    case FusionMode::Off:
      return "off";
  }
  return "off";
}

FusionMode parse_fusion(std::string_view text) {
  if (text == "cat") return FusionMode::Cat;
  if (text == "attn" || text == "attention") return FusionMode::Attention;
  if (text == "off") return FusionMode::Off;
  throw ParameterError("fusion must be cat, attn or off, got '" + std::string(text) + "'");
}

void Components::validate() const {
  if (!neural_field && !gauss_pc) {
    throw ParameterError("ablation leaves no feature path: enable neural_field or gauss_pc");
  }
  if ((t_rbf_gr || deformation) && !gauss_pc) {
    throw ParameterError("t_rbf_gr and deformation operate on Gaussians and need gauss_pc");
  }
  if (fusion != FusionMode::Off && !(neural_field && gauss_pc)) {
    throw ParameterError("fusion " + std::string(fusion_name(fusion)) +
                         " needs both neural_field and gauss_pc; use fusion=off");
  }
}

std::vector<std::pair<std::string, Components>> ablation_rows() {
  using F = FusionMode;
  return {
      {"nf", {true, false, false, false, F::Off}},
      {"nf+gpc", {true, true, false, false, F::Off}},
      {"gpc+rbf", {false, true, true, false, F::Off}},
      {"gpc+def", {false, true, false, true, F::Off}},
      {"gpc+rbf+def", {false, true, true, true, F::Off}},
      {"full-cat", {true, true, true, true, F::Cat}},
      {"full", {true, true, true, true, F::Attention}},
  };
}

RunConfig RunConfig::preset(Preset preset) {
  RunConfig c;
  if (preset == Preset::Lidar) {
    c.points_per_frame = 8192;
    c.gaussians = 16;
    c.smoothness = true;
  }
  return c;
}

namespace {

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view want) {
  throw ParameterError("config key '" + std::string(key) + "': expected " + std::string(want) + ", got '" +
                       std::string(value) + "'");
}

std::size_t parse_count(std::string_view key, std::string_view v) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

double parse_real(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) bad_value(key, v, "a finite number");
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  bad_value(key, v, "true or false");
}

std::string real_text(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) {
  const auto v = trim(value);
  if (key == "points") points_per_frame = parse_count(key, v);
  else if (key == "gaussians") gaussians = parse_count(key, v);
  else if (key == "kappa") kappa = parse_count(key, v);
  else if (key == "iterations") iterations = parse_count(key, v);
  else if (key == "patience") patience = parse_count(key, v);
  else if (key == "lr") lr = parse_real(key, v);
  else if (key == "weight_decay") weight_decay = parse_real(key, v);
  else if (key == "poly_power") poly_power = parse_real(key, v);
  else if (key == "lambda_cd") weights.chamfer = parse_real(key, v);
  else if (key == "lambda_smooth") weights.smooth = parse_real(key, v);
  else if (key == "lambda_emd") weights.emd = parse_real(key, v);
  else if (key == "smoothness") smoothness = parse_bool(key, v);
  else if (key == "smooth_k") smooth_k = parse_count(key, v);
  else if (key == "seed") seed = parse_count(key, v);
  else if (key == "outlier_removal") outlier_removal = parse_bool(key, v);
  else if (key == "outlier_k") outlier_k = parse_count(key, v);
  else if (key == "outlier_std") outlier_std = parse_real(key, v);
  else if (key == "dropout") dropout = parse_real(key, v);
  else if (key == "exact_emd_limit") exact_emd_limit = parse_count(key, v);
  else if (key == "sinkhorn_reg") sinkhorn_reg = parse_real(key, v);
  else if (key == "sinkhorn_iterations") sinkhorn_iterations = parse_count(key, v);
  else if (key == "neural_field") components.neural_field = parse_bool(key, v);
  else if (key == "gauss_pc") components.gauss_pc = parse_bool(key, v);
  else if (key == "t_rbf_gr") components.t_rbf_gr = parse_bool(key, v);
  else if (key == "deformation") components.deformation = parse_bool(key, v);
  else if (key == "fusion") components.fusion = parse_fusion(v);
  else throw ParameterError("unknown config key '" + std::string(key) + "'");
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  auto b = [](bool x) { return x ? "true" : "false"; };
  os << "points = " << points_per_frame << '\n'
     << "gaussians = " << gaussians << '\n'
     << "kappa = " << kappa << '\n'
     << "iterations = " << iterations << '\n'
     << "patience = " << patience << '\n'
     << "lr = " << real_text(lr) << '\n'
     << "weight_decay = " << real_text(weight_decay) << '\n'
     << "poly_power = " << real_text(poly_power) << '\n'
     << "lambda_cd = " << real_text(weights.chamfer) << '\n'
     << "lambda_smooth = " << real_text(weights.smooth) << '\n'
     << "lambda_emd = " << real_text(weights.emd) << '\n'
     << "smoothness = " << b(smoothness) << '\n'
     << "smooth_k = " << smooth_k << '\n'
     << "seed = " << seed << '\n'
     << "outlier_removal = " << b(outlier_removal) << '\n'
     << "outlier_k = " << outlier_k << '\n'
     << "outlier_std = " << real_text(outlier_std) << '\n'
     << "dropout = " << real_text(dropout) << '\n'
     << "exact_emd_limit = " << exact_emd_limit << '\n'
     << "sinkhorn_reg = " << real_text(sinkhorn_reg) << '\n'
     << "sinkhorn_iterations = " << sinkhorn_iterations << '\n'
     << "neural_field = " << b(components.neural_field) << '\n'
     << "gauss_pc = " << b(components.gauss_pc) << '\n'
     << "t_rbf_gr = " << b(components.t_rbf_gr) << '\n'
     << "deformation = " << b(components.deformation) << '\n'
     << "fusion = " << fusion_name(components.fusion) << '\n';
  return os.str();
}

RunConfig RunConfig::from_text(std::string_view text, RunConfig base) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    const auto line = trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ParameterError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    base.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return base;
}

RunConfig RunConfig::from_text(std::string_view text) { return from_text(text, RunConfig{}); }

RunConfig RunConfig::load(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open config '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str(), std::move(base));
}

void RunConfig::validate() const {
  auto positive = [](std::size_t v, const char* key) {
    if (v == 0) throw ParameterError(std::string("config key '") + key + "' must be positive");
  };
  positive(points_per_frame, "points");
  positive(gaussians, "gaussians");
  positive(kappa, "kappa");
  positive(smooth_k, "smooth_k");
  positive(outlier_k, "outlier_k");
  positive(sinkhorn_iterations, "sinkhorn_iterations");
  if (gaussians > points_per_frame) throw ParameterError("config: gaussians must not exceed points");
  if (smoothness && smooth_k >= points_per_frame) throw ParameterError("config: smooth_k must be below points");
  if (!(lr > 0.0)) throw ParameterError("config key 'lr' must be positive");
  if (weight_decay < 0.0) throw ParameterError("config key 'weight_decay' must be >= 0");
  if (!(poly_power > 0.0)) throw ParameterError("config key 'poly_power' must be positive");
  if (weights.chamfer < 0.0 || weights.smooth < 0.0 || weights.emd < 0.0) {
    throw ParameterError("config: loss weights must be >= 0");
  }
  if (!(outlier_std > 0.0)) throw ParameterError("config key 'outlier_std' must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ParameterError("config key 'dropout' must lie in [0, 1)");
  if (!(sinkhorn_reg > 0.0)) throw ParameterError("config key 'sinkhorn_reg' must be positive");
  components.validate();
}

}  // namespace ng4d
