#ifndef LMHP_IO_HPP
#define LMHP_IO_HPP

// On-disk formats.
//
// Cascade text (UTF-8, one record per line):
//   #entity <label>                declares a vocabulary entry (optional)
//   #horizon <real> [<seq-id>]     horizon of <seq-id>, or of the sequence of
//                                  the next event line when the id is omitted
//   <seq-id>\t<label>\t<time>      one event
// Blank lines are ignored. Events are sorted per sequence on load.
//
// Checkpoint (little-endian):
//   "LMHP" u32 version
//   u64 |X|  u64 d
//   f64 theta_mu[|X|]  f64 theta_beta  f64 theta_self[|X|]
//   f64 theta_u[|X| d] (row-major)  f64 theta_v[|X| d] (row-major)
//   u64 vocabulary size (0 or |X|), then per label: u32 byte length, bytes
//   u64 epoch  u64 seed  u32 digest length, digest bytes

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lmhp/error.hpp"
#include "lmhp/model.hpp"
#include "lmhp/simulate.hpp"

namespace lmhp {

/// A dataset together with its string vocabulary and sequence ids.
struct Cascades {
  Dataset data;
  std::vector<std::string> labels;        ///< labels[x] names entity x
  std::vector<std::string> sequence_ids;  ///< sequence_ids[h] names sequence h
};

namespace detail {

inline std::optional<double> parse_real(std::string_view s) {
  double v = 0.0;
  const char* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::string format_real(double v) {
  std::array<char, 64> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc()) throw InvalidArgument("cannot format number");
  return std::string(buf.data(), ptr);
}

inline std::string_view trim(std::string_view s) {
  const auto ws = " \t\r";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

struct PendingEvent {
  std::size_t entity;
  double time;
  std::size_t line;
};

struct PendingSequence {
  std::string id;
  std::optional<double> horizon;
  std::size_t horizon_line = 0;
  std::vector<PendingEvent> events;
};

}  // namespace detail

inline Cascades parse_cascades(std::istream& in) {
  std::vector<std::string> labels;
  std::unordered_map<std::string, std::size_t> label_index;
  std::vector<detail::PendingSequence> seqs;
  std::unordered_map<std::string, std::size_t> seq_index;
  // A `#horizon` without id waits for the next event line.
  double floating_value = 0.0;
  std::size_t floating_line = 0;

  auto entity_of = [&](const std::string& label) {
    auto [it, inserted] = label_index.emplace(label, labels.size());
    if (inserted) labels.push_back(label);
    return it->second;
  };
  auto sequence_of = [&](const std::string& id) -> detail::PendingSequence& {
    auto [it, inserted] = seq_index.emplace(id, seqs.size());
    if (inserted) seqs.push_back({id, std::nullopt, 0, {}});
    return seqs[it->second];
  };
  auto set_horizon = [&](detail::PendingSequence& seq, double value, std::size_t line) {
    if (seq.horizon && *seq.horizon != value)
      throw ParseError("conflicting horizon for sequence '" + seq.id + "'", line);
    seq.horizon = value;
    seq.horizon_line = line;
  };

  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    const std::string_view line = raw;
    if (detail::trim(line).empty()) continue;
    if (line.starts_with("#entity")) {
      const std::string label(detail::trim(line.substr(7)));
      if (label.empty() || (line.size() > 7 && line[7] != ' ' && line[7] != '\t'))
        throw ParseError("malformed #entity line", line_no);
      if (label_index.contains(label)) throw ParseError("duplicate entity '" + label + "'", line_no);
      entity_of(label);
      continue;
    }
    if (line.starts_with("#horizon")) {
      const std::string_view rest = detail::trim(line.substr(8));
      if (rest.empty() || (line[8] != ' ' && line[8] != '\t')) throw ParseError("malformed #horizon line", line_no);
      const auto split = rest.find_first_of(" \t");
      const auto value = detail::parse_real(rest.substr(0, split));
      if (!value || !(*value > 0.0)) throw ParseError("horizon must be a positive finite number", line_no);
      if (split == std::string_view::npos) {
        if (floating_line) throw ParseError("#horizon without sequence id is not followed by an event", line_no);
        floating_value = *value;
        floating_line = line_no;
      } else {
        set_horizon(sequence_of(std::string(detail::trim(rest.substr(split)))), *value, line_no);
      }
      continue;
    }
    if (line.starts_with("#")) throw ParseError("unknown directive", line_no);

    const auto tab1 = line.find('\t');
    const auto tab2 = tab1 == std::string_view::npos ? tab1 : line.find('\t', tab1 + 1);
    if (tab2 == std::string_view::npos || line.find('\t', tab2 + 1) != std::string_view::npos)
      throw ParseError("expected <sequence-id>\\t<entity-label>\\t<timestamp>", line_no);
    const std::string id(line.substr(0, tab1));
    const std::string label(line.substr(tab1 + 1, tab2 - tab1 - 1));
    if (id.empty() || label.empty()) throw ParseError("empty sequence id or entity label", line_no);
    const auto time = detail::parse_real(detail::trim(line.substr(tab2 + 1)));
    if (!time) throw ParseError("malformed timestamp", line_no);
    if (*time < 0.0) throw ParseError("negative timestamp", line_no);
    detail::PendingSequence& seq = sequence_of(id);
    if (floating_line) {
      set_horizon(seq, floating_value, floating_line);
      floating_line = 0;
    }
    seq.events.push_back({entity_of(label), *time, line_no});
  }
  if (floating_line) throw ParseError("#horizon without sequence id at end of file", floating_line);
  if (seqs.empty()) throw ParseError("no sequences", 0);
  if (labels.empty()) throw ParseError("no entities", 0);

  Cascades out;
  out.labels = std::move(labels);
  std::vector<Sequence> sequences;
  sequences.reserve(seqs.size());
  for (auto& s : seqs) {
    std::stable_sort(s.events.begin(), s.events.end(),
                     [](const auto& a, const auto& b) { return a.time < b.time; });
    for (std::size_t i = 1; i < s.events.size(); ++i)
      if (s.events[i].time == s.events[i - 1].time)
        throw ParseError("duplicate timestamp in sequence '" + s.id + "'",
                         std::max(s.events[i].line, s.events[i - 1].line));
    double horizon = 0.0;
    if (s.horizon) {
      horizon = *s.horizon;
      for (const auto& e : s.events)
        if (e.time > horizon) throw ParseError("timestamp exceeds the sequence horizon", e.line);
    } else {
      horizon = s.events.empty() ? 0.0 : s.events.back().time;
      if (!(horizon > 0.0))
        throw ParseError("cannot infer a positive horizon for sequence '" + s.id + "'",
                         s.events.empty() ? 0 : s.events.back().line);
    }
    std::vector<Event> events;
    events.reserve(s.events.size());
    for (const auto& e : s.events) events.push_back({static_cast<EntityId>(e.entity), e.time});
    sequences.emplace_back(std::move(events), horizon);
    out.sequence_ids.push_back(std::move(s.id));
  }
  out.data = Dataset(out.labels.size(), std::move(sequences));
  return out;
}

inline Cascades parse_cascades(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  return parse_cascades(in);
}

/// Default vocabulary ("0", "1", ...) and sequence ids for generated data.
inline Cascades make_cascades(Dataset data) {
  Cascades c;
  for (std::size_t x = 0; x < data.num_entities(); ++x) c.labels.push_back(std::to_string(x));
  for (std::size_t h = 0; h < data.num_sequences(); ++h) c.sequence_ids.push_back(std::to_string(h));
  c.data = std::move(data);
  return c;
}

/// Writes every entity as `#entity`, then each sequence as a `#horizon` line
/// followed by its events. parse_cascades() of the output reproduces `c`.
inline void write_cascades(std::ostream& out, const Cascades& c) {
  if (c.labels.size() != c.data.num_entities() || c.sequence_ids.size() != c.data.num_sequences())
    throw InvalidArgument("vocabulary or sequence ids do not match the dataset");
  auto check_token = [](const std::string& s, const char* what) {
    if (s.empty() || s.find_first_of("\t\r\n") != std::string::npos || detail::trim(s) != s || s.front() == '#')
      throw InvalidArgument(std::string(what) + " '" + s + "' cannot be written");
  };
  for (const std::string& label : c.labels) {
    check_token(label, "entity label");
    out << "#entity " << label << '\n';
  }
  for (std::size_t h = 0; h < c.data.num_sequences(); ++h) {
    const std::string& id = c.sequence_ids[h];
    check_token(id, "sequence id");
    const Sequence& seq = c.data.sequence(h);
    out << "#horizon " << detail::format_real(seq.horizon()) << ' ' << id << '\n';
    for (const Event& e : seq.events())
      out << id << '\t' << c.labels[e.entity] << '\t' << detail::format_real(e.time) << '\n';
  }
}

inline void write_cascades(const std::filesystem::path& path, const Cascades& c) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  write_cascades(out, c);
  if (!out.flush()) throw InvalidArgument("failed writing " + path.string());
}

struct DatasetStats {
  std::size_t num_entities = 0;
  std::size_t num_sequences = 0;
  std::size_t num_events = 0;
  std::vector<double> active_fraction;  ///< per sequence, sorted descending
  std::map<std::size_t, std::size_t> event_count_histogram;  ///< events per sequence -> sequences
  double mean_active = 0.0;  ///< E, mean active entities per sequence
  double median_active_fraction = 0.0;
};

inline DatasetStats dataset_stats(const Dataset& data) {
  if (data.num_sequences() == 0 || data.num_entities() == 0) throw InvalidArgument("dataset is empty");
  DatasetStats s;
  s.num_entities = data.num_entities();
  s.num_sequences = data.num_sequences();
  s.num_events = data.num_events();
  double active_total = 0.0;
  for (std::size_t h = 0; h < data.num_sequences(); ++h) {
    const double k = static_cast<double>(data.active_entities(h).size());
    active_total += k;
    s.active_fraction.push_back(k / static_cast<double>(data.num_entities()));
    ++s.event_count_histogram[data.sequence(h).size()];
  }
  std::sort(s.active_fraction.begin(), s.active_fraction.end(), std::greater<>());
  s.mean_active = active_total / static_cast<double>(data.num_sequences());
  const std::size_t n = s.active_fraction.size();
  s.median_active_fraction =
      n % 2 ? s.active_fraction[n / 2] : 0.5 * (s.active_fraction[n / 2 - 1] + s.active_fraction[n / 2]);
  return s;
}

struct CheckpointMeta {
  std::uint64_t epoch = 0;
  std::uint64_t seed = 0;
  std::string config_digest;
  std::vector<std::string> vocabulary;  ///< empty or one label per entity

  friend bool operator==(const CheckpointMeta&, const CheckpointMeta&) = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) { little_endian(v, 4); }
  void u64(std::uint64_t v) { little_endian(v, 8); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(std::string_view s) { out_.append(s); }
  void str(std::string_view s) {
    if (s.size() > UINT32_MAX) throw InvalidArgument("string too long for checkpoint");
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }
  std::string take() { return std::move(out_); }

 private:
  void little_endian(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view in) : in_(in) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(little_endian(4)); }
  std::uint64_t u64() { return little_endian(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string_view bytes(std::size_t n) {
    need(n);
    const auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string str() { return std::string(bytes(u32())); }
  std::size_t remaining() const { return in_.size() - pos_; }
  void need(std::size_t n) const {
    if (remaining() < n) throw FormatError("checkpoint is truncated");
  }

 private:
  std::uint64_t little_endian(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(const ModelParams& p, const CheckpointMeta& meta) {
  if (!p.shape_valid()) throw InvalidArgument("parameter blocks have inconsistent shapes");
  if (!meta.vocabulary.empty() && meta.vocabulary.size() != p.num_entities)
    throw InvalidArgument("vocabulary size does not match the number of entities");
  detail::ByteWriter w;
  w.bytes("LMHP");
  w.u32(kCheckpointVersion);
  w.u64(p.num_entities);
  w.u64(p.dim);
  for (double v : p.theta_mu) w.f64(v);
  w.f64(p.theta_beta);
  for (double v : p.theta_self) w.f64(v);
  for (double v : p.theta_u) w.f64(v);
  for (double v : p.theta_v) w.f64(v);
  w.u64(meta.vocabulary.size());
  for (const std::string& label : meta.vocabulary) w.str(label);
  w.u64(meta.epoch);
  w.u64(meta.seed);
  w.str(meta.config_digest);
  return w.take();
}

inline std::pair<ModelParams, CheckpointMeta> deserialize_checkpoint(std::string_view bytes) {
  detail::ByteReader r(bytes);
  if (r.remaining() < 4 || r.bytes(4) != "LMHP") throw FormatError("bad checkpoint magic");
  if (const auto version = r.u32(); version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const std::uint64_t n = r.u64();
  const std::uint64_t d = r.u64();
  if (d == 0 || n > r.remaining() / 8 || d > r.remaining() / 8 || (n > 0 && n * d > r.remaining() / 16))
    throw FormatError("checkpoint dimensions are inconsistent with its size");
  ModelParams p = ModelParams::zeros(n, d);
  for (double& v : p.theta_mu) v = r.f64();
  p.theta_beta = r.f64();
  for (double& v : p.theta_self) v = r.f64();
  for (double& v : p.theta_u) v = r.f64();
  for (double& v : p.theta_v) v = r.f64();
  CheckpointMeta meta;
  const std::uint64_t vocab = r.u64();
  if (vocab != 0 && vocab != n) throw FormatError("vocabulary size does not match the number of entities");
  if (vocab > r.remaining() / 4) throw FormatError("checkpoint is truncated");
  meta.vocabulary.reserve(vocab);
  for (std::uint64_t i = 0; i < vocab; ++i) meta.vocabulary.push_back(r.str());
  meta.epoch = r.u64();
  meta.seed = r.u64();
  meta.config_digest = r.str();
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint");
  return {std::move(p), std::move(meta)};
}

/// Writes atomically: the data goes to a sibling temporary file that is
/// renamed over `path`.
inline void write_checkpoint(const std::filesystem::path& path, const ModelParams& p, const CheckpointMeta& meta) {
  const std::string bytes = serialize_checkpoint(p, meta);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidArgument("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out.flush()) throw InvalidArgument("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

inline std::pair<ModelParams, CheckpointMeta> read_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file_bytes(path));
}

/// Ground truth as JSON; alpha is stored as sparse [x, y, value] triplets.
inline nlohmann::json truth_to_json(const HawkesTruth& t) {
  nlohmann::json alpha = nlohmann::json::array();
  for (std::size_t x = 0; x < t.alpha.n; ++x)
    for (std::size_t y = 0; y < t.alpha.n; ++y)
      if (const double v = t.alpha.at(x, y); v != 0.0) alpha.push_back({x, y, v});
  return {{"format", "lmhp-truth"}, {"version", 1}, {"num_entities", t.num_entities()},
          {"beta", t.beta},         {"mu", t.mu},   {"alpha", std::move(alpha)}};
}

inline HawkesTruth truth_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "lmhp-truth" || j.at("version") != 1) throw FormatError("not an lmhp truth file");
    HawkesTruth t;
    const std::size_t n = j.at("num_entities").get<std::size_t>();
    t.beta = j.at("beta").get<double>();
    t.mu = j.at("mu").get<std::vector<double>>();
    if (t.mu.size() != n) throw FormatError("truth mu has wrong length");
    t.alpha.n = n;
    t.alpha.values.assign(n * n, 0.0);
    for (const auto& entry : j.at("alpha")) {
      const auto x = entry.at(0).get<std::size_t>(), y = entry.at(1).get<std::size_t>();
      if (x >= n || y >= n) throw FormatError("truth alpha index out of range");
      t.alpha.values[x * n + y] = entry.at(2).get<double>();
    }
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed truth file: ") + e.what());
  }
}

inline void write_truth(const std::filesystem::path& path, const HawkesTruth& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  out << truth_to_json(t).dump(1) << '\n';
  if (!out.flush()) throw InvalidArgument("failed writing " + path.string());
}

inline HawkesTruth read_truth(const std::filesystem::path& path) {
  const std::string text = read_file_bytes(path);
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw FormatError("truth file is not valid JSON: " + path.string());
  return truth_from_json(j);
}

}  // namespace lmhp

#endif  // LMHP_IO_HPP
