#ifndef SPEECHENC_IO_HPP
#define SPEECHENC_IO_HPP

// On-disk exchange formats.
//
// MTX1 container, 24-byte header followed by a row-major little-endian payload:
//
//   offset  size  field
//   0       4     magic "MTX1"
//   4       1     version (1)
//   5       1     dtype (1 = float32, 2 = float64)
//   6       1     ndim (2)
//   7       1     reserved (0)
//   8       8     rows (uint64 LE)
//   16      8     cols (uint64 LE)
//
// Metadata (rate, label, flags) lives in a JSON sidecar at "<path>.meta.json".
// Payloads must be finite unless the sidecar sets "mask": true.

#include "speechenc/core.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace speechenc {

using json = nlohmann::json;
namespace fs = std::filesystem;

enum class Dtype : std::uint8_t { f32 = 1, f64 = 2 };

inline constexpr std::size_t kHeaderBytes = 24;

inline std::size_t dtype_size(Dtype d) { return d == Dtype::f32 ? 4 : 8; }

struct FeatureMatrix {
  Matrix data;
  double rate_hz = 0.0;
  std::string label;
  bool causal = false;
};

struct ResponseMatrix {
  Matrix data;
  double tr_seconds = 2.0;
  bool preprocessed = false;
};

struct MtxHeader {
  Dtype dtype = Dtype::f64;
  std::uint64_t rows = 0;
  std::uint64_t cols = 0;
};

struct MtxFile {
  MtxHeader header;
  Matrix data;
  json meta = json::object();
};

namespace detail {

template <class T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

template <class T>
void put(std::string& buf, T v) {
  v = to_little(v);
  char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.append(raw, sizeof(T));
}

template <class T>
T get(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return to_little(v);
}

inline std::string sidecar_path(const fs::path& path) { return path.string() + ".meta.json"; }

inline std::string read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

inline std::string encode_mtx(const Matrix& m, Dtype dtype) {
  std::string buf;
  buf.reserve(kHeaderBytes + static_cast<std::size_t>(m.size()) * dtype_size(dtype));
  buf.append("MTX1", 4);
  buf.push_back(static_cast<char>(1));
  buf.push_back(static_cast<char>(dtype));
  buf.push_back(static_cast<char>(2));
  buf.push_back(static_cast<char>(0));
  detail::put<std::uint64_t>(buf, static_cast<std::uint64_t>(m.rows()));
  detail::put<std::uint64_t>(buf, static_cast<std::uint64_t>(m.cols()));
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (dtype == Dtype::f32)
        detail::put<float>(buf, static_cast<float>(m(i, j)));
      else
        detail::put<double>(buf, m(i, j));
    }
  }
  return buf;
}

inline void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) fail("cannot write " + path.string());
  out << j.dump(2) << "\n";
  if (!out) fail("write failed: " + path.string());
}

inline json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    fail("invalid JSON in " + path.string() + ": " + e.what());
  }
}

// Writes the container and its sidecar. Non-finite values are rejected unless
// meta carries "mask": true.
inline void write_mtx(const Matrix& m, const fs::path& path, Dtype dtype = Dtype::f64,
                      json meta = json::object()) {
  const bool masked = meta.value("mask", false);
  if (!masked && !all_finite(m)) fail("non-finite values in matrix for " + path.string());
  if (m.rows() == 0 || m.cols() == 0) fail("degenerate shape for " + path.string());
  const std::string buf = encode_mtx(m, dtype);
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("cannot write " + path.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) fail("write failed: " + path.string());
  }
  meta["dtype"] = dtype == Dtype::f32 ? "f32" : "f64";
  write_json(detail::sidecar_path(path), meta);
}

inline MtxHeader decode_header(const std::string& bytes, const std::string& what) {
  if (bytes.size() < kHeaderBytes) fail("truncated header in " + what);
  if (std::memcmp(bytes.data(), "MTX1", 4) != 0) fail("bad magic in " + what);
  const auto version = static_cast<unsigned char>(bytes[4]);
  const auto dtype = static_cast<unsigned char>(bytes[5]);
  const auto ndim = static_cast<unsigned char>(bytes[6]);
  if (version != 1) fail("unsupported version " + std::to_string(version) + " in " + what);
  if (dtype != 1 && dtype != 2) fail("unsupported dtype " + std::to_string(dtype) + " in " + what);
  if (ndim != 2) fail("unsupported ndim " + std::to_string(ndim) + " in " + what);
  MtxHeader h;
  h.dtype = static_cast<Dtype>(dtype);
  h.rows = detail::get<std::uint64_t>(bytes.data() + 8);
  h.cols = detail::get<std::uint64_t>(bytes.data() + 16);
  if (h.rows == 0 || h.cols == 0) fail("degenerate shape in " + what);
  return h;
}

inline MtxFile decode_mtx(const std::string& bytes, const std::string& what, bool allow_nonfinite) {
  MtxFile f;
  f.header = decode_header(bytes, what);
  const std::size_t elem = dtype_size(f.header.dtype);
  const auto rows = f.header.rows;
  const auto cols = f.header.cols;
  if (cols > (std::numeric_limits<std::uint64_t>::max() - kHeaderBytes) / elem / rows)
    fail("shape overflow in " + what);
  const std::uint64_t expected = kHeaderBytes + rows * cols * elem;
  if (bytes.size() < expected) fail("truncated payload in " + what);
  if (bytes.size() > expected) fail("trailing bytes in " + what);
  f.data.resize(static_cast<Index>(rows), static_cast<Index>(cols));
  const char* p = bytes.data() + kHeaderBytes;
  for (Index i = 0; i < f.data.rows(); ++i) {
    for (Index j = 0; j < f.data.cols(); ++j) {
      f.data(i, j) = f.header.dtype == Dtype::f32 ? static_cast<double>(detail::get<float>(p))
                                                  : detail::get<double>(p);
      p += elem;
    }
  }
  if (!allow_nonfinite && !all_finite(f.data)) fail("non-finite values in " + what);
  return f;
}

inline MtxHeader read_mtx_header(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open " + path.string());
  std::string head(kHeaderBytes, '\0');
  in.read(head.data(), static_cast<std::streamsize>(kHeaderBytes));
  head.resize(static_cast<std::size_t>(in.gcount()));
  MtxHeader h = decode_header(head, path.string());
  const auto size = fs::file_size(path);
  if (size != kHeaderBytes + h.rows * h.cols * dtype_size(h.dtype))
    fail("file size does not match header in " + path.string());
  return h;
}

inline MtxFile read_mtx(const fs::path& path) {
  json meta = json::object();
  const auto side = detail::sidecar_path(path);
  if (fs::exists(side)) meta = read_json(side);
  MtxFile f = decode_mtx(detail::read_file_bytes(path), path.string(), meta.value("mask", false));
  f.meta = std::move(meta);
  return f;
}

inline void write_matrix(const FeatureMatrix& m, const fs::path& path, Dtype dtype = Dtype::f64) {
  if (!(m.rate_hz > 0.0)) fail("feature rate must be positive");
  write_mtx(m.data, path, dtype,
            json{{"kind", "feature"}, {"rate_hz", m.rate_hz}, {"label", m.label}, {"causal", m.causal}});
}

inline void write_matrix(const ResponseMatrix& m, const fs::path& path, Dtype dtype = Dtype::f64) {
  write_mtx(m.data, path, dtype,
            json{{"kind", "response"}, {"tr_seconds", m.tr_seconds}, {"preprocessed", m.preprocessed}});
}

inline FeatureMatrix read_feature(const fs::path& path) {
  MtxFile f = read_mtx(path);
  if (!f.meta.contains("rate_hz")) fail("missing rate_hz in sidecar of " + path.string());
  FeatureMatrix out;
  out.data = std::move(f.data);
  out.rate_hz = f.meta.at("rate_hz").get<double>();
  out.label = f.meta.value("label", std::string{});
  out.causal = f.meta.value("causal", false);
  if (!(out.rate_hz > 0.0)) fail("non-positive rate in " + path.string());
  return out;
}

inline ResponseMatrix read_response(const fs::path& path) {
  MtxFile f = read_mtx(path);
  ResponseMatrix out;
  out.data = std::move(f.data);
  out.tr_seconds = f.meta.value("tr_seconds", 2.0);
  out.preprocessed = f.meta.value("preprocessed", false);
  return out;
}

// ---------------------------------------------------------------------------
// Alignment tables

enum class AlignmentKind { phoneme, word };

struct AlignmentRow {
  double start_s = 0.0;
  double end_s = 0.0;
  std::string label;
};

struct AlignmentTable {
  std::vector<AlignmentRow> rows;
  AlignmentKind kind = AlignmentKind::phoneme;
};

struct AlignmentReadResult {
  AlignmentTable table;
  std::size_t reordered = 0;  // rows that appeared before an earlier start time
};

inline std::string trim(std::string s) {
  const auto ws = " \t\r\n";
  s.erase(0, s.find_first_not_of(ws));
  const auto last = s.find_last_not_of(ws);
  s.erase(last == std::string::npos ? 0 : last + 1);
  return s;
}

inline double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (trim(s.substr(used)).empty() && std::isfinite(v)) return v;
  } catch (const std::exception&) {
  }
  fail("invalid number '" + s + "' at " + where);
}

inline AlignmentReadResult parse_alignment(std::istream& in, AlignmentKind kind, const std::string& what,
                                           bool strict) {
  AlignmentReadResult res;
  res.table.kind = kind;
  std::string line;
  if (!std::getline(in, line) || trim(line) != "start_s,end_s,label")
    fail(what + ": expected header 'start_s,end_s,label'");
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const std::string where = what + " row " + std::to_string(lineno);
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
    if (c2 == std::string::npos) fail(where + ": expected 3 fields");
    AlignmentRow row;
    row.start_s = parse_double(line.substr(0, c1), where);
    row.end_s = parse_double(line.substr(c1 + 1, c2 - c1 - 1), where);
    row.label = trim(line.substr(c2 + 1));
    if (row.start_s < 0.0 || row.end_s < 0.0) fail(where + ": negative time");
    if (row.end_s <= row.start_s) fail(where + ": end <= start");
    if (row.label.empty()) fail(where + ": empty label");
    if (!res.table.rows.empty() && row.start_s < res.table.rows.back().start_s) {
      if (strict) fail(where + ": rows out of order (start " + line.substr(0, c1) + ")");
      ++res.reordered;
    }
    res.table.rows.push_back(std::move(row));
  }
  std::stable_sort(res.table.rows.begin(), res.table.rows.end(),
                   [](const AlignmentRow& a, const AlignmentRow& b) { return a.start_s < b.start_s; });
  for (std::size_t i = 1; i < res.table.rows.size(); ++i) {
    const auto& prev = res.table.rows[i - 1];
    const auto& cur = res.table.rows[i];
    if (cur.start_s < prev.end_s)
      fail(what + ": overlapping intervals '" + prev.label + "' and '" + cur.label + "' at " +
           std::to_string(cur.start_s) + " s");
  }
  return res;
}

// Reads "start_s,end_s,label" CSV. Out-of-order rows are sorted and counted;
// with strict=true they are an error instead.
inline AlignmentReadResult read_alignment(const fs::path& path, AlignmentKind kind, bool strict = false) {
  std::ifstream in(path);
  if (!in) fail("cannot open " + path.string());
  return parse_alignment(in, kind, path.string(), strict);
}

inline void write_alignment(const AlignmentTable& t, const fs::path& path) {
  std::ofstream out(path);
  if (!out) fail("cannot write " + path.string());
  out << "start_s,end_s,label\n";
  out.precision(17);
  for (const auto& r : t.rows) out << r.start_s << ',' << r.end_s << ',' << r.label << '\n';
}

// ---------------------------------------------------------------------------
// Dataset manifest

enum class StoryRole { train, val, test };

inline std::string to_string(StoryRole r) {
  switch (r) {
    case StoryRole::train: return "train";
    case StoryRole::val: return "val";
    case StoryRole::test: return "test";
  }
  return "train";
}

inline StoryRole parse_role(const std::string& s) {
  if (s == "train") return StoryRole::train;
  if (s == "val") return StoryRole::val;
  if (s == "test") return StoryRole::test;
  fail("unknown story role '" + s + "'");
}

struct StoryEntry {
  std::string story_id;
  double duration_s = 0.0;
  std::map<std::string, std::string> feature_paths;
  std::string response_path;
  std::string phonemes_path;
  std::string words_path;
  StoryRole role = StoryRole::train;
};

struct DatasetManifest {
  std::vector<StoryEntry> stories;
  std::map<std::string, std::vector<Index>> roi_masks;
  std::uint64_t seed = 0;
  fs::path base_dir;

  fs::path resolve(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  }

  std::vector<const StoryEntry*> with_role(StoryRole r) const {
    std::vector<const StoryEntry*> out;
    for (const auto& s : stories)
      if (s.role == r) out.push_back(&s);
    return out;
  }

  const StoryEntry& story(const std::string& id) const {
    for (const auto& s : stories)
      if (s.story_id == id) return s;
    fail("unknown story '" + id + "'");
  }

  // Encoding runs fit on train stories and score on the single designated test set.
  void require_encoding_split() const {
    if (with_role(StoryRole::train).empty()) fail("manifest has no train stories");
    if (with_role(StoryRole::test).empty()) fail("manifest has no test stories");
  }
};

inline json manifest_to_json(const DatasetManifest& m) {
  json stories = json::array();
  for (const auto& s : m.stories) {
    json j{{"story_id", s.story_id},
           {"duration_s", s.duration_s},
           {"feature_paths", s.feature_paths},
           {"response_path", s.response_path},
           {"role", to_string(s.role)}};
    json align = json::object();
    if (!s.phonemes_path.empty()) align["phonemes"] = s.phonemes_path;
    if (!s.words_path.empty()) align["words"] = s.words_path;
    j["alignment_paths"] = align;
    stories.push_back(std::move(j));
  }
  return json{{"stories", stories}, {"roi_masks", m.roi_masks}, {"seed", m.seed}};
}

struct ManifestOptions {
  bool check_files = true;
};

// Parses and validates a manifest. Problems are reported with story_id context.
inline DatasetManifest parse_manifest(const json& j, const fs::path& base_dir, ManifestOptions opts = {}) {
  DatasetManifest m;
  m.base_dir = base_dir;
  try {
    m.seed = j.value("seed", std::uint64_t{0});
    if (!j.contains("stories") || !j.at("stories").is_array()) fail("manifest: 'stories' array required");
    std::set<std::string> ids;
    for (const auto& js : j.at("stories")) {
      StoryEntry s;
      s.story_id = js.at("story_id").get<std::string>();
      if (!ids.insert(s.story_id).second) fail("manifest: duplicate story_id '" + s.story_id + "'");
      s.duration_s = js.value("duration_s", 0.0);
      if (js.contains("feature_paths"))
        s.feature_paths = js.at("feature_paths").get<std::map<std::string, std::string>>();
      s.response_path = js.value("response_path", std::string{});
      if (js.contains("alignment_paths")) {
        const auto& a = js.at("alignment_paths");
        s.phonemes_path = a.value("phonemes", std::string{});
        s.words_path = a.value("words", std::string{});
      }
      s.role = parse_role(js.value("role", std::string{"train"}));
      m.stories.push_back(std::move(s));
    }
    if (j.contains("roi_masks"))
      m.roi_masks = j.at("roi_masks").get<std::map<std::string, std::vector<Index>>>();
  } catch (const json::exception& e) {
    fail(std::string("manifest: ") + e.what());
  }

  for (const auto& [name, idx] : m.roi_masks)
    for (Index v : idx)
      if (v < 0) fail("manifest: ROI '" + name + "' has negative voxel index");

  if (!opts.check_files) return m;

  std::optional<std::uint64_t> n_voxels;
  for (const auto& s : m.stories) {
    const std::string ctx = "story '" + s.story_id + "': ";
    auto must_exist = [&](const std::string& p, const std::string& what) {
      if (!fs::exists(m.resolve(p))) fail(ctx + "missing " + what + " file " + m.resolve(p).string());
    };
    for (const auto& [label, p] : s.feature_paths) must_exist(p, "feature '" + label + "'");
    if (!s.response_path.empty()) {
      must_exist(s.response_path, "response");
      const auto h = read_mtx_header(m.resolve(s.response_path));
      if (n_voxels && *n_voxels != h.cols) fail(ctx + "voxel count differs from other stories");
      n_voxels = h.cols;
    }
    try {
      if (!s.phonemes_path.empty()) {
        must_exist(s.phonemes_path, "phoneme alignment");
        read_alignment(m.resolve(s.phonemes_path), AlignmentKind::phoneme, true);
      }
      if (!s.words_path.empty()) {
        must_exist(s.words_path, "word alignment");
        read_alignment(m.resolve(s.words_path), AlignmentKind::word, true);
      }
    } catch (const Error& e) {
      fail(ctx + e.what());
    }
  }
  if (n_voxels) {
    for (const auto& [name, idx] : m.roi_masks)
      for (Index v : idx)
        if (static_cast<std::uint64_t>(v) >= *n_voxels)
          fail("manifest: ROI '" + name + "' voxel index " + std::to_string(v) + " >= V=" +
               std::to_string(*n_voxels));
  }
  return m;
}

inline DatasetManifest load_manifest(const fs::path& path, ManifestOptions opts = {}) {
  if (!fs::exists(path)) fail("manifest not found: " + path.string());
  return parse_manifest(read_json(path), path.parent_path(), opts);
}

}  // namespace speechenc

#endif  // SPEECHENC_IO_HPP
