#include "ng4d/pointcloud.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

#include "ng4d/error.hpp"
#include "ng4d/kdtree.hpp"
#include "ng4d/random.hpp"

namespace ng4d {

static_assert(std::endian::native == std::endian::little, "binary PLY I/O assumes a little-endian host");

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

bool parse_double(std::string_view tok, double& out) {
  const auto* end = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(tok.data(), end, out);
  return ec == std::errc{} && ptr == end;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t b = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > b) out.push_back(line.substr(b, i - b));
  }
  return out;
}

class LineReader {
 public:
  explicit LineReader(std::string_view s) : s_(s) {}
  bool next(std::string_view& line) {
    if (pos_ >= s_.size()) return false;
    const auto nl = s_.find('\n', pos_);
    const auto end = nl == std::string_view::npos ? s_.size() : nl;
    line = s_.substr(pos_, end - pos_);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos_ = nl == std::string_view::npos ? s_.size() : nl + 1;
    ++number_;
    return true;
  }
  std::size_t line_number() const { return number_; }
  std::size_t offset() const { return pos_; }

 private:
  std::string_view s_;
  std::size_t pos_ = 0;
  std::size_t number_ = 0;
};

PointMatrix to_matrix(const std::vector<double>& xyz) {
  PointMatrix m(static_cast<Eigen::Index>(xyz.size() / 3), 3);
  std::copy(xyz.begin(), xyz.end(), m.data());
  return m;
}

PointCloud parse_xyz(std::string_view bytes, double timestamp) {
  LineReader reader(bytes);
  std::string_view line;
  std::vector<double> xyz;
  while (reader.next(line)) {
    const auto hash = line.find('#');
    if (hash != std::string_view::npos) line = line.substr(0, hash);
    const auto tok = split_ws(line);
    if (tok.empty()) continue;
    if (tok.size() < 3) {
      throw ParseError("xyz line " + std::to_string(reader.line_number()) + ": expected 3 coordinates");
    }
    for (std::size_t a = 0; a < 3; ++a) {
      double v = 0.0;
      if (!parse_double(tok[a], v) || !std::isfinite(v)) {
        throw ParseError("xyz line " + std::to_string(reader.line_number()) +
                         ": invalid coordinate '" + std::string(tok[a]) + "'");
      }
      xyz.push_back(v);
    }
  }
  if (xyz.empty()) throw ParseError("empty cloud");
  return PointCloud{to_matrix(xyz), timestamp};
}

enum class PlyType { I8, U8, I16, U16, I32, U32, F32, F64 };

std::size_t type_size(PlyType t) {
  switch (t) {
    case PlyType::I8:
    case PlyType::U8: return 1;
    case PlyType::I16:
    case PlyType::U16: return 2;
    case PlyType::I32:
    case PlyType::U32:
    case PlyType::F32: return 4;
    case PlyType::F64: return 8;
  }
  return 0;
}

std::optional<PlyType> parse_type(std::string_view name) {
  static const std::pair<std::string_view, PlyType> table[] = {
      {"char", PlyType::I8},     {"int8", PlyType::I8},      {"uchar", PlyType::U8},
      {"uint8", PlyType::U8},    {"short", PlyType::I16},    {"int16", PlyType::I16},
      {"ushort", PlyType::U16},  {"uint16", PlyType::U16},   {"int", PlyType::I32},
      {"int32", PlyType::I32},   {"uint", PlyType::U32},     {"uint32", PlyType::U32},
      {"float", PlyType::F32},   {"float32", PlyType::F32},  {"double", PlyType::F64},
      {"float64", PlyType::F64}};
  for (const auto& [n, t] : table) {
    if (n == name) return t;
  }
  return std::nullopt;
}

double read_binary(const char* p, PlyType t) {
  switch (t) {
    case PlyType::I8: { std::int8_t v; std::memcpy(&v, p, 1); return v; }
    case PlyType::U8: { std::uint8_t v; std::memcpy(&v, p, 1); return v; }
    case PlyType::I16: { std::int16_t v; std::memcpy(&v, p, 2); return v; }
    case PlyType::U16: { std::uint16_t v; std::memcpy(&v, p, 2); return v; }
    case PlyType::I32: { std::int32_t v; std::memcpy(&v, p, 4); return v; }
    case PlyType::U32: { std::uint32_t v; std::memcpy(&v, p, 4); return v; }
    case PlyType::F32: { float v; std::memcpy(&v, p, 4); return v; }
    case PlyType::F64: { double v; std::memcpy(&v, p, 8); return v; }
  }
  return 0.0;
}

struct PlyProperty {
  std::string name;
  PlyType type = PlyType::F32;
  bool is_list = false;
  PlyType count_type = PlyType::U8;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> props;
};

PointCloud parse_ply(std::string_view bytes, double timestamp) {
  LineReader reader(bytes);
  std::string_view line;
  auto fail = [&](const std::string& msg) -> ParseError {
    return ParseError("ply header line " + std::to_string(reader.line_number()) + ": " + msg);
  };
  if (!reader.next(line) || line != "ply") throw ParseError("ply header line 1: missing 'ply' magic");
  bool binary = false;
  bool have_format = false;
  std::vector<PlyElement> elements;
  bool ended = false;
  while (reader.next(line)) {
    const auto tok = split_ws(line);
    if (tok.empty() || tok[0] == "comment" || tok[0] == "obj_info") continue;
    if (tok[0] == "format") {
      if (tok.size() < 2) throw fail("incomplete format line");
      if (tok[1] == "ascii") binary = false;
      else if (tok[1] == "binary_little_endian") binary = true;
      else throw fail("unsupported format '" + std::string(tok[1]) + "'");
      have_format = true;
    } else if (tok[0] == "element") {
      if (tok.size() < 3) throw fail("incomplete element line");
      PlyElement el;
      el.name = std::string(tok[1]);
      double c = 0;
      if (!parse_double(tok[2], c) || c < 0 || c != std::floor(c)) throw fail("invalid element count");
      el.count = static_cast<std::size_t>(c);
      elements.push_back(std::move(el));
    } else if (tok[0] == "property") {
      if (elements.empty()) throw fail("property before any element");
      PlyProperty p;
      if (tok.size() >= 5 && tok[1] == "list") {
        const auto ct = parse_type(tok[2]);
        const auto vt = parse_type(tok[3]);
        if (!ct || !vt) throw fail("unknown list property type");
        p.is_list = true;
        p.count_type = *ct;
        p.type = *vt;
        p.name = std::string(tok[4]);
      } else if (tok.size() >= 3) {
        const auto t = parse_type(tok[1]);
        if (!t) throw fail("unknown property type '" + std::string(tok[1]) + "'");
        p.type = *t;
        p.name = std::string(tok[2]);
      } else {
        throw fail("incomplete property line");
      }
      elements.back().props.push_back(std::move(p));
    } else if (tok[0] == "end_header") {
      ended = true;
      break;
    } else {
      throw fail("unexpected keyword '" + std::string(tok[0]) + "'");
    }
  }
  if (!ended) throw ParseError("ply header: missing end_header");
  if (!have_format) throw ParseError("ply header: missing format line");

  std::size_t vertex_el = elements.size();
  for (std::size_t e = 0; e < elements.size(); ++e) {
    if (elements[e].name == "vertex") {
      vertex_el = e;
      break;
    }
  }
  if (vertex_el == elements.size()) throw ParseError("ply header: no vertex element");
  const auto& vertex = elements[vertex_el];
  int axis_prop[3] = {-1, -1, -1};
  for (std::size_t i = 0; i < vertex.props.size(); ++i) {
    const auto& n = vertex.props[i].name;
    const int a = n == "x" ? 0 : n == "y" ? 1 : n == "z" ? 2 : -1;
    if (a >= 0 && !vertex.props[i].is_list) axis_prop[a] = static_cast<int>(i);
  }
  if (axis_prop[0] < 0 || axis_prop[1] < 0 || axis_prop[2] < 0) {
    throw ParseError("ply header: vertex element lacks x, y, z properties");
  }
  if (vertex.count == 0) throw ParseError("empty cloud");

  std::vector<double> xyz(vertex.count * 3);
  const std::size_t body = reader.offset();
  if (binary) {
    std::size_t pos = body;
    auto need = [&](std::size_t n) {
      if (pos + n > bytes.size()) {
        throw ParseError("ply payload truncated at byte offset " + std::to_string(pos));
      }
    };
    for (std::size_t e = 0; e <= vertex_el; ++e) {
      const auto& el = elements[e];
      for (std::size_t r = 0; r < el.count; ++r) {
        for (std::size_t pi = 0; pi < el.props.size(); ++pi) {
          const auto& p = el.props[pi];
          if (p.is_list) {
            need(type_size(p.count_type));
            const double c = read_binary(bytes.data() + pos, p.count_type);
            pos += type_size(p.count_type);
            const auto len = static_cast<std::size_t>(c) * type_size(p.type);
            need(len);
            pos += len;
            continue;
          }
          need(type_size(p.type));
          if (e == vertex_el) {
            for (int a = 0; a < 3; ++a) {
              if (axis_prop[a] == static_cast<int>(pi)) {
                const double v = read_binary(bytes.data() + pos, p.type);
                if (!std::isfinite(v)) {
                  throw ParseError("ply non-finite coordinate at byte offset " + std::to_string(pos));
                }
                xyz[r * 3 + static_cast<std::size_t>(a)] = v;
              }
            }
          }
          pos += type_size(p.type);
        }
      }
    }
  } else {
    for (std::size_t e = 0; e <= vertex_el; ++e) {
      const auto& el = elements[e];
      for (std::size_t r = 0; r < el.count; ++r) {
        std::vector<std::string_view> tok;
        do {
          if (!reader.next(line)) {
            throw ParseError("ply payload truncated at line " + std::to_string(reader.line_number() + 1));
          }
          tok = split_ws(line);
        } while (tok.empty());
        if (e != vertex_el) continue;
        if (tok.size() < vertex.props.size()) {
          throw ParseError("ply line " + std::to_string(reader.line_number()) + ": expected " +
                           std::to_string(vertex.props.size()) + " values");
        }
        for (int a = 0; a < 3; ++a) {
          double v = 0.0;
          const auto& t = tok[static_cast<std::size_t>(axis_prop[a])];
          if (!parse_double(t, v) || !std::isfinite(v)) {
            throw ParseError("ply line " + std::to_string(reader.line_number()) +
                             ": invalid coordinate '" + std::string(t) + "'");
          }
          xyz[r * 3 + static_cast<std::size_t>(a)] = v;
        }
      }
    }
  }
  return PointCloud{to_matrix(xyz), timestamp};
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

void write_file(const std::filesystem::path& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

}  // namespace

CloudFormat format_from_path(const std::filesystem::path& path) {
  const auto ext = lower(path.extension().string());
  if (ext == ".ply") return CloudFormat::PlyBinaryLe;
  if (ext == ".xyz" || ext == ".txt") return CloudFormat::Xyz;
  throw DataError("unrecognized point-cloud extension for '" + path.string() + "'");
}

PointCloud parse_cloud(std::string_view bytes, CloudFormat format, double timestamp) {
  if (format == CloudFormat::Xyz) return parse_xyz(bytes, timestamp);
  return parse_ply(bytes, timestamp);
}

PointCloud load_cloud(const std::filesystem::path& path, std::optional<CloudFormat> format,
                      double timestamp) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto fmt = format ? *format : format_from_path(path);
  try {
    return parse_cloud(bytes, fmt, timestamp);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::string serialize_cloud(const PointCloud& pc, CloudFormat format) {
  std::string out;
  const auto n = pc.size();
  if (format == CloudFormat::Xyz) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      out += format_double(pc.points(r, 0)) + ' ' + format_double(pc.points(r, 1)) + ' ' +
             format_double(pc.points(r, 2)) + '\n';
    }
    return out;
  }
  const bool binary = format == CloudFormat::PlyBinaryLe;
  out = "ply\nformat ";
  out += binary ? "binary_little_endian" : "ascii";
  out += " 1.0\nelement vertex " + std::to_string(n) +
         "\nproperty double x\nproperty double y\nproperty double z\nend_header\n";
  if (binary) {
    const auto off = out.size();
    out.resize(off + n * 3 * sizeof(double));
    std::memcpy(out.data() + off, pc.points.data(), n * 3 * sizeof(double));
  } else {
    out += serialize_cloud(pc, CloudFormat::Xyz);
  }
  return out;
}

void save_cloud(const std::filesystem::path& path, const PointCloud& pc, CloudFormat format) {
  write_file(path, serialize_cloud(pc, format));
}

void save_flow_xyz(const std::filesystem::path& path, const PointMatrix& points, const PointMatrix& flow) {
  if (points.rows() != flow.rows()) throw DimensionError("flow dump: point and flow counts differ");
  std::string out;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    for (int a = 0; a < 3; ++a) out += format_double(points(i, a)) + ' ';
    for (int a = 0; a < 3; ++a) out += format_double(flow(i, a)) + (a == 2 ? '\n' : ' ');
  }
  write_file(path, out);
}

PointCloud sample_points(const PointCloud& pc, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ParameterError("sample_points: n must be >= 1");
  const auto total = pc.size();
  if (total == 0) throw DataError("sample_points: empty cloud");
  Rng rng(seed);
  std::vector<std::size_t> pick;
  if (total >= n) {
    std::vector<std::size_t> idx(total);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < n; ++i) {
      const auto j = i + static_cast<std::size_t>(rng.below(total - i));
      std::swap(idx[i], idx[j]);
    }
    pick.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n));
  } else {
    pick.resize(total);
    std::iota(pick.begin(), pick.end(), std::size_t{0});
    while (pick.size() < n) pick.push_back(static_cast<std::size_t>(rng.below(total)));
  }
  PointCloud out;
  out.timestamp = pc.timestamp;
  out.points.resize(static_cast<Eigen::Index>(n), 3);
  for (std::size_t i = 0; i < n; ++i) {
    out.points.row(static_cast<Eigen::Index>(i)) = pc.points.row(static_cast<Eigen::Index>(pick[i]));
  }
  return out;
}

std::vector<double> mean_knn_distances(const PointMatrix& points, std::size_t k) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (k < 1 || k >= n) {
    throw ParameterError("outlier removal: need 1 <= k < N (k=" + std::to_string(k) +
                         ", N=" + std::to_string(n) + ")");
  }
  const auto nb = knn_self(points, k);
  std::vector<double> d(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      s += (points.row(static_cast<Eigen::Index>(i)) - points.row(static_cast<Eigen::Index>(nb[i * k + j]))).norm();
    }
    d[i] = s / static_cast<double>(k);
  }
  return d;
}

PointCloud remove_outliers(const PointCloud& pc, std::size_t k, double std_ratio) {
  if (!(std_ratio >= 0.0) || !std::isfinite(std_ratio)) {
    throw ParameterError("outlier removal: std_ratio must be finite and >= 0");
  }
  const auto d = mean_knn_distances(pc.points, k);
  const double n = static_cast<double>(d.size());
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / n;
  double var = 0.0;
  for (double v : d) var += (v - mean) * (v - mean);
  const double sd = d.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
  const double threshold = mean + std_ratio * sd;
  std::vector<Eigen::Index> keep;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d[i] <= threshold) keep.push_back(static_cast<Eigen::Index>(i));
  }
  PointCloud out;
  out.timestamp = pc.timestamp;
  out.points.resize(static_cast<Eigen::Index>(keep.size()), 3);
  for (std::size_t i = 0; i < keep.size(); ++i) out.points.row(static_cast<Eigen::Index>(i)) = pc.points.row(keep[i]);
  return out;
}

void validate_sequence(const Sequence& seq) {
  if (seq.frames.size() < 2) throw DataError("sequence needs at least 2 frames");
  for (std::size_t f = 0; f < seq.frames.size(); ++f) {
    const auto& fr = seq.frames[f];
    if (fr.size() == 0) throw DataError("frame " + std::to_string(f) + ": empty cloud");
    if (!fr.points.allFinite()) throw DataError("frame " + std::to_string(f) + ": non-finite coordinates");
    if (!std::isfinite(fr.timestamp)) throw DataError("frame " + std::to_string(f) + ": non-finite timestamp");
    if (f > 0 && !(fr.timestamp > seq.frames[f - 1].timestamp)) {
      throw DataError(fr.timestamp == seq.frames[f - 1].timestamp
                          ? "duplicate timestamp " + format_double(fr.timestamp)
                          : "timestamps must be strictly increasing (frame " + std::to_string(f) + ")");
    }
  }
}

Sequence normalize_timestamps(const Sequence& seq) {
  validate_sequence(seq);
  Sequence out = seq;
  const double t0 = seq.frames.front().timestamp;
  const double span = seq.frames.back().timestamp - t0;
  for (auto& f : out.frames) f.timestamp = (f.timestamp - t0) / span;
  out.frames.front().timestamp = 0.0;
  out.frames.back().timestamp = 1.0;
  return out;
}

}  // namespace ng4d
