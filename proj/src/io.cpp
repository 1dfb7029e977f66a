#include "hom/io.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cstring>
#include <set>
#include <sstream>
#include <unistd.h>
#include <vector>

#include "json.hpp"

namespace hom {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_number(double value) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  return std::string(buf.data(), end);
}

std::string digest_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

std::string file_digest(const fs::path& path) { return digest_hex(read_text(path)); }

AtomicFile::AtomicFile(fs::path target, bool binary) : target_(std::move(target)) {
  temp_ = target_;
  temp_ += ".tmp." + std::to_string(::getpid());
  out_.open(temp_, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
  if (!out_) throw IoError("cannot open " + temp_.string() + " for writing");
}

AtomicFile::~AtomicFile() {
  if (!committed_) {
    out_.close();
    std::error_code ec;
    fs::remove(temp_, ec);
  }
}

void AtomicFile::commit() {
  out_.flush();
  if (!out_) throw IoError("write failed for " + target_.string());
  out_.close();
  std::error_code ec;
  fs::rename(temp_, target_, ec);
  if (ec) throw IoError("cannot rename " + temp_.string() + " to " + target_.string() + ": " + ec.message());
  committed_ = true;
}

void write_text_atomic(const fs::path& path, std::string_view content) {
  AtomicFile f(path, true);
  f.stream().write(content.data(), static_cast<std::streamsize>(content.size()));
  f.commit();
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed for " + path.string());
  return ss.str();
}

const char* to_string(Mode m) { return m == Mode::Pulsed ? "pulsed" : "cw"; }
const char* to_string(Polarization p) { return p == Polarization::Parallel ? "parallel" : "orthogonal"; }
const char* to_string(NormalizationMode m) {
  switch (m) {
    case NormalizationMode::AgainstOrthogonal: return "against_orthogonal";
    case NormalizationMode::TrianglePeakFit: return "triangle_peak_fit";
    case NormalizationMode::WingLevel: return "wing_level";
  }
  return "?";
}

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
bool parse_value(std::string_view s, T& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

struct Entry {
  std::string value;
  int line;
};
using KeyValues = std::map<std::string, Entry, std::less<>>;

const std::set<std::string, std::less<>> kConfigKeys = {
    "mode",          "envelope",           "pulse_fwhm_ns",         "rep_rate_mhz",
    "frame_length_ns", "mean_photons_per_pulse", "polarization",    "noise",
    "noise_sigma_mhz", "noise_half_span_mhz", "coherence_time_ns",  "interference_contrast",
    "arm_imbalance", "dark_rate_khz",      "jitter_ps",             "num_frames",
    "seed"};

// Splits `key = value` lines; keys outside `allowed` go to `extra` when given.
KeyValues split_lines(std::string_view text, const std::set<std::string, std::less<>>* allowed,
                      KeyValues* extra = nullptr) {
  KeyValues kv;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": missing key");
    KeyValues* target = &kv;
    if (allowed && !allowed->contains(key)) {
      if (!extra) throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
      target = extra;
    }
    if (target->contains(key)) throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    (*target)[key] = {value, line_no};
  }
  return kv;
}

SimConfig config_from(const KeyValues& kv) {
  SimConfig c;
  auto fail = [](const std::string& key, const Entry& e, const std::string& what) {
    throw ConfigError("line " + std::to_string(e.line) + ": " + key + ": " + what);
  };
  auto number = [&](const char* key, double& out) {
    if (auto it = kv.find(key); it != kv.end())
      if (!parse_value(it->second.value, out) || !std::isfinite(out)) fail(key, it->second, "expected a number");
  };
  auto choice = [&](const char* key, std::initializer_list<const char*> options) -> std::string {
    auto it = kv.find(key);
    if (it == kv.end()) return {};
    for (const char* o : options)
      if (it->second.value == o) return o;
    std::string list;
    for (const char* o : options) list += std::string(list.empty() ? "" : "|") + o;
    fail(key, it->second, "expected one of " + list);
    return {};
  };

  if (auto m = choice("mode", {"pulsed", "cw"}); !m.empty()) c.mode = m == "pulsed" ? Mode::Pulsed : Mode::Cw;
  if (auto e = choice("envelope", {"square", "gaussian"}); !e.empty())
    c.envelope.kind = e == "square" ? EnvelopeKind::Square : EnvelopeKind::Gaussian;
  if (auto p = choice("polarization", {"parallel", "orthogonal"}); !p.empty())
    c.polarization = p == "parallel" ? Polarization::Parallel : Polarization::Orthogonal;
  number("pulse_fwhm_ns", c.envelope.t_p);
  number("rep_rate_mhz", c.rep_rate_mhz);
  number("frame_length_ns", c.frame_length_ns);
  number("mean_photons_per_pulse", c.mean_photons_per_pulse);
  number("interference_contrast", c.interference_contrast);
  number("arm_imbalance", c.arm_imbalance);
  number("dark_rate_khz", c.dark_rate_khz);
  number("jitter_ps", c.jitter_ps);
  if (auto it = kv.find("num_frames"); it != kv.end())
    if (!parse_value(it->second.value, c.num_frames)) fail("num_frames", it->second, "expected an integer");
  if (auto it = kv.find("seed"); it != kv.end())
    if (!parse_value(it->second.value, c.seed)) fail("seed", it->second, "expected an unsigned 64-bit integer");

  std::string noise = choice("noise", {"none", "gaussian", "uniform"});
  const bool has_sigma = kv.contains("noise_sigma_mhz");
  const bool has_tc = kv.contains("coherence_time_ns");
  const bool has_span = kv.contains("noise_half_span_mhz");
  // without an explicit noise key the width key selects the kind
  if (noise.empty()) noise = has_span ? "uniform" : (has_sigma || has_tc) ? "gaussian" : "none";
  if (noise == "none") {
    if (has_sigma || has_tc || has_span)
      throw ConfigError("noise: width given but noise = none (set noise = gaussian or uniform)");
    c.noise = NoiseModel::none();
  } else if (noise == "gaussian") {
    if (has_sigma == has_tc) throw ConfigError("noise: gaussian noise needs exactly one of noise_sigma_mhz, coherence_time_ns");
    if (has_span) throw ConfigError("noise_half_span_mhz: only valid with noise = uniform");
    double v = 0;
    number(has_sigma ? "noise_sigma_mhz" : "coherence_time_ns", v);
    if (!(v > 0)) throw ConfigError(std::string(has_sigma ? "noise_sigma_mhz" : "coherence_time_ns") + ": must be positive");
    c.noise = has_sigma ? NoiseModel::gaussian(v) : NoiseModel::from_coherence_time(v);
  } else {
    if (!has_span) throw ConfigError("noise: uniform noise needs noise_half_span_mhz");
    if (has_sigma || has_tc) throw ConfigError("noise: noise_sigma_mhz / coherence_time_ns only valid with gaussian noise");
    double v = 0;
    number("noise_half_span_mhz", v);
    c.noise = NoiseModel::uniform(v);
  }
  c.validate();
  return c;
}

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& s, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
std::uint64_t get_le(const unsigned char* p, int n) {
  std::uint64_t v = 0;
  for (int i = n - 1; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

const std::set<std::string, std::less<>> kStreamKeys = {"format", "frame_begin", "frame_end", "singles_d1",
                                                        "singles_d2", "manifest_digest"};
constexpr std::string_view kColumnLine = "frame_index,detector,time_ps";

EventStream stream_from_header(std::string_view header, int first_line) {
  KeyValues extra;
  KeyValues kv;
  try {
    kv = split_lines(header, &kConfigKeys, &extra);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("stream header: ") + e.what());
  }
  for (const auto& [k, e] : extra)
    if (!kStreamKeys.contains(k))
      throw FormatError("line " + std::to_string(e.line + first_line - 1) + ": unknown header key '" + k + "'");
  EventStream s;
  try {
    s.config = config_from(kv);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("stream header: ") + e.what());
  }
  s.frame_begin = 0;
  s.frame_end = s.config.num_frames;
  auto int_key = [&](const char* key, std::int64_t& out) {
    if (auto it = extra.find(key); it != extra.end())
      if (!parse_value(it->second.value, out)) throw FormatError(std::string("stream header: bad ") + key);
  };
  int_key("frame_begin", s.frame_begin);
  int_key("frame_end", s.frame_end);
  return s;
}

// `lines` maps event i to its line in a text stream; binary streams report the event number.
void check_and_count(EventStream& s, const std::vector<int>* lines = nullptr) {
  auto where = [&](std::size_t i) {
    return lines ? "line " + std::to_string((*lines)[i]) : "event " + std::to_string(i + 1);
  };
  s.singles = {0, 0};
  std::int64_t prev_frame = INT64_MIN, prev_time = INT64_MIN;
  const std::int64_t span = s.config.frame_span_ps();
  for (std::size_t i = 0; i < s.events.size(); ++i) {
    const auto& e = s.events[i];
    if (e.frame_index < s.frame_begin || e.frame_index >= s.frame_end)
      throw FormatError(where(i) + ": frame index outside the header's frame range");
    if (e.time_ps < e.frame_index * span || e.time_ps >= (e.frame_index + 1) * span)
      throw FormatError(where(i) + ": time outside its frame");
    if (e.frame_index < prev_frame || (e.frame_index == prev_frame && e.time_ps < prev_time))
      throw FormatError(where(i) + ": events not sorted by (frame, time)");
    prev_frame = e.frame_index;
    prev_time = e.time_ps;
    ++s.singles[e.detector == Detector::D1 ? 0 : 1];
  }
}

}  // namespace

SimConfig parse_config(std::string_view text) { return config_from(split_lines(text, &kConfigKeys)); }

SimConfig load_config(const fs::path& path) { return parse_config(read_text(path)); }

std::string format_config(const SimConfig& c) {
  std::ostringstream os;
  os << "mode = " << to_string(c.mode) << '\n'
     << "envelope = " << (c.envelope.kind == EnvelopeKind::Square ? "square" : "gaussian") << '\n'
     << "pulse_fwhm_ns = " << format_number(c.envelope.t_p) << '\n'
     << "rep_rate_mhz = " << format_number(c.rep_rate_mhz) << '\n'
     << "frame_length_ns = " << format_number(c.frame_length_ns) << '\n'
     << "mean_photons_per_pulse = " << format_number(c.mean_photons_per_pulse) << '\n'
     << "polarization = " << to_string(c.polarization) << '\n';
  switch (c.noise.kind) {
    case NoiseModel::Kind::None: os << "noise = none\n"; break;
    case NoiseModel::Kind::Gaussian:
      os << "noise = gaussian\nnoise_sigma_mhz = " << format_number(c.noise.width_mhz) << '\n';
      break;
    case NoiseModel::Kind::Uniform:
      os << "noise = uniform\nnoise_half_span_mhz = " << format_number(c.noise.width_mhz) << '\n';
      break;
  }
  os << "interference_contrast = " << format_number(c.interference_contrast) << '\n'
     << "arm_imbalance = " << format_number(c.arm_imbalance) << '\n'
     << "dark_rate_khz = " << format_number(c.dark_rate_khz) << '\n'
     << "jitter_ps = " << format_number(c.jitter_ps) << '\n'
     << "num_frames = " << c.num_frames << '\n'
     << "seed = " << c.seed << '\n';
  return os.str();
}

std::string stream_header(const EventStream& s, const std::string& manifest_digest) {
  std::string h = "format = hom-events-1\n" + format_config(s.config);
  h += "frame_begin = " + std::to_string(s.frame_begin) + '\n';
  h += "frame_end = " + std::to_string(s.frame_end) + '\n';
  h += "singles_d1 = " + std::to_string(s.singles[0]) + '\n';
  h += "singles_d2 = " + std::to_string(s.singles[1]) + '\n';
  if (!manifest_digest.empty()) h += "manifest_digest = " + manifest_digest + '\n';
  return h;
}

void write_stream(const fs::path& path, const EventStream& s, StreamFormat format, const std::string& manifest_digest) {
  const std::string header = stream_header(s, manifest_digest);
  AtomicFile f(path, true);
  auto& out = f.stream();
  if (format == StreamFormat::Text) {
    out << header << kColumnLine << '\n';
    std::string line;
    for (const auto& e : s.events) {
      line.clear();
      line += std::to_string(e.frame_index);
      line += e.detector == Detector::D1 ? ",1," : ",2,";
      line += std::to_string(e.time_ps);
      line += '\n';
      out.write(line.data(), static_cast<std::streamsize>(line.size()));
    }
  } else {
    std::string head(kBinaryMagic, sizeof kBinaryMagic);
    put_u32(head, kBinaryVersion);
    put_u32(head, 0);
    put_u32(head, static_cast<std::uint32_t>(header.size()));
    head += header;
    put_u64(head, s.events.size());
    out.write(head.data(), static_cast<std::streamsize>(head.size()));
    std::string rec;
    rec.reserve(17);
    for (const auto& e : s.events) {
      rec.clear();
      put_u64(rec, static_cast<std::uint64_t>(e.frame_index));
      rec.push_back(static_cast<char>(e.detector));
      put_u64(rec, static_cast<std::uint64_t>(e.time_ps));
      out.write(rec.data(), 17);
    }
  }
  f.commit();
}

EventStream read_stream(const fs::path& path) {
  const std::string data = read_text(path);
  EventStream s;
  std::vector<int> event_lines;
  const bool binary = data.size() >= 16 && std::memcmp(data.data(), kBinaryMagic, 8) == 0;
  if (binary) {
    const auto* p = reinterpret_cast<const unsigned char*>(data.data());
    const auto version = static_cast<std::uint32_t>(get_le(p + 8, 4));
    if (version != kBinaryVersion) throw FormatError("binary stream: unsupported version " + std::to_string(version));
    if (data.size() < 20) throw FormatError("binary stream: truncated header");
    const auto hlen = static_cast<std::size_t>(get_le(p + 16, 4));
    if (data.size() < 20 + hlen + 8) throw FormatError("binary stream: truncated header");
    s = stream_from_header(std::string_view(data).substr(20, hlen), 1);
    const std::size_t base = 20 + hlen;
    const std::uint64_t n = get_le(p + base, 8);
    if (data.size() != base + 8 + n * 17) throw FormatError("binary stream: size does not match event count");
    s.events.resize(static_cast<std::size_t>(n));
    for (std::uint64_t i = 0; i < n; ++i) {
      const unsigned char* r = p + base + 8 + i * 17;
      auto& e = s.events[static_cast<std::size_t>(i)];
      e.frame_index = static_cast<std::int64_t>(get_le(r, 8));
      if (r[8] != 1 && r[8] != 2) throw FormatError("binary stream: event " + std::to_string(i + 1) + ": bad detector");
      e.detector = static_cast<Detector>(r[8]);
      e.time_ps = static_cast<std::int64_t>(get_le(r + 9, 8));
    }
  } else {
    std::string_view text(data);
    const auto col = text.find(std::string(kColumnLine) + "\n");
    if (col == std::string_view::npos || (col > 0 && text[col - 1] != '\n'))
      throw FormatError("text stream: missing column line '" + std::string(kColumnLine) + "'");
    s = stream_from_header(text.substr(0, col), 1);
    int line_no = static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(col), '\n')) + 1;
    std::size_t pos = col + kColumnLine.size() + 1;
    while (pos < text.size()) {
      const auto nl = text.find('\n', pos);
      std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
      pos = nl == std::string_view::npos ? text.size() : nl + 1;
      ++line_no;
      line = trim(line);
      if (line.empty()) continue;
      const auto c1 = line.find(',');
      const auto c2 = c1 == std::string_view::npos ? c1 : line.find(',', c1 + 1);
      DetectionEvent e;
      int det = 0;
      if (c2 == std::string_view::npos || !parse_value(line.substr(0, c1), e.frame_index) ||
          !parse_value(line.substr(c1 + 1, c2 - c1 - 1), det) || !parse_value(line.substr(c2 + 1), e.time_ps) ||
          (det != 1 && det != 2))
        throw FormatError("line " + std::to_string(line_no) + ": expected 'frame_index,detector(1|2),time_ps'");
      e.detector = static_cast<Detector>(det);
      s.events.push_back(e);
      event_lines.push_back(line_no);
    }
  }
  check_and_count(s, binary ? nullptr : &event_lines);
  return s;
}

// --- histograms -----------------------------------------------------------

void write_histogram_csv(const fs::path& path, const CoincidenceHistogram& h, const std::string& manifest_digest) {
  std::ostringstream os;
  os << "# format = hom-histogram-1\n"
     << "# bin_width_ps = " << h.bin_width_ps << '\n'
     << "# range_ps = " << h.range_ps << '\n'
     << "# range_rounded = " << (h.range_rounded ? "true" : "false") << '\n'
     << "# total_pairs = " << h.total_pairs << '\n'
     << "# singles_d1 = " << h.singles[0] << '\n'
     << "# singles_d2 = " << h.singles[1] << '\n'
     << "# frames = " << h.frames << '\n'
     << "# mode = " << to_string(h.info.mode) << '\n'
     << "# polarization = " << to_string(h.info.polarization) << '\n';
  if (h.info.pulse_fwhm_ns) os << "# pulse_fwhm_ns = " << format_number(*h.info.pulse_fwhm_ns) << '\n';
  if (h.info.coherence_time_ns) os << "# coherence_time_ns = " << format_number(*h.info.coherence_time_ns) << '\n';
  if (!h.info.source_digest.empty()) os << "# source_digest = " << h.info.source_digest << '\n';
  if (!manifest_digest.empty()) os << "# manifest_digest = " << manifest_digest << '\n';
  os << "bin_center_ps,counts\n";
  const std::int64_t half = h.half_bins();
  for (std::size_t i = 0; i < h.size(); ++i)
    os << (static_cast<std::int64_t>(i) - half) * h.bin_width_ps << ',' << h.counts[i] << '\n';
  write_text_atomic(path, os.str());
}

CoincidenceHistogram read_histogram_csv(const fs::path& path) {
  const std::string text = read_text(path);
  std::istringstream in(text);
  std::string line;
  std::map<std::string, std::string> meta;
  int line_no = 0;
  bool in_rows = false;
  std::vector<std::pair<std::int64_t, std::uint64_t>> rows;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view v = trim(line);
    if (v.empty()) continue;
    if (!in_rows && v.starts_with('#')) {
      v = trim(v.substr(1));
      const auto eq = v.find('=');
      if (eq != std::string_view::npos) meta[std::string(trim(v.substr(0, eq)))] = std::string(trim(v.substr(eq + 1)));
      continue;
    }
    if (!in_rows) {
      if (v != "bin_center_ps,counts") throw FormatError(path.string() + ": line " + std::to_string(line_no) + ": expected 'bin_center_ps,counts'");
      in_rows = true;
      continue;
    }
    const auto c = v.find(',');
    std::int64_t center = 0;
    std::uint64_t count = 0;
    if (c == std::string_view::npos || !parse_value(v.substr(0, c), center) || !parse_value(v.substr(c + 1), count))
      throw FormatError(path.string() + ": line " + std::to_string(line_no) + ": expected 'bin_center_ps,counts'");
    rows.emplace_back(center, count);
  }
  auto need = [&](const char* key) -> const std::string& {
    auto it = meta.find(key);
    if (it == meta.end()) throw FormatError(path.string() + ": missing metadata '" + key + "'");
    return it->second;
  };
  CoincidenceHistogram h;
  auto as_int = [&](const char* key, auto& out) {
    if (!parse_value(need(key), out)) throw FormatError(path.string() + ": bad metadata '" + std::string(key) + "'");
  };
  as_int("bin_width_ps", h.bin_width_ps);
  as_int("range_ps", h.range_ps);
  as_int("frames", h.frames);
  if (meta.contains("singles_d1")) as_int("singles_d1", h.singles[0]);
  if (meta.contains("singles_d2")) as_int("singles_d2", h.singles[1]);
  if (h.bin_width_ps <= 0 || h.range_ps % h.bin_width_ps != 0 || h.half_bins() < 0)
    throw FormatError(path.string() + ": inconsistent binning metadata");
  h.range_rounded = meta["range_rounded"] == "true";
  h.info.mode = meta["mode"] == "cw" ? Mode::Cw : Mode::Pulsed;
  h.info.polarization = meta["polarization"] == "orthogonal" ? Polarization::Orthogonal : Polarization::Parallel;
  if (meta.contains("pulse_fwhm_ns")) {
    double v = 0;
    if (parse_value(meta["pulse_fwhm_ns"], v)) h.info.pulse_fwhm_ns = v;
  }
  if (meta.contains("coherence_time_ns")) {
    double v = 0;
    if (parse_value(meta["coherence_time_ns"], v)) h.info.coherence_time_ns = v;
  }
  h.info.source_digest = meta["source_digest"];
  const std::int64_t half = h.half_bins();
  h.counts.assign(static_cast<std::size_t>(2 * half + 1), 0);
  for (const auto& [center, count] : rows) {
    if (center % h.bin_width_ps != 0 || std::abs(center / h.bin_width_ps) > half)
      throw FormatError(path.string() + ": bin centre " + std::to_string(center) + " is off the grid");
    h.counts[static_cast<std::size_t>(center / h.bin_width_ps + half)] = count;
    h.total_pairs += count;
  }
  return h;
}

// --- curves ---------------------------------------------------------------

fs::path sidecar_path(const fs::path& csv) {
  fs::path p = csv;
  p += ".json";
  return p;
}

namespace {

json series_json(const Series& s) {
  json j;
  j["mask"] = s.mask;
  j["variance"] = std::vector<double>(s.variance.data(), s.variance.data() + s.variance.size());
  j["unit"] = std::vector<double>(s.unit.data(), s.unit.data() + s.unit.size());
  return j;
}

void write_series_csv(const fs::path& path, const Series& s) {
  std::ostringstream os;
  os << "lag_ns,value\n";
  for (Eigen::Index i = 0; i < s.size(); ++i) os << format_number(s.x[i]) << ',' << format_number(s.y[i]) << '\n';
  write_text_atomic(path, os.str());
}

json info_json(const AcquisitionInfo& info) {
  json j;
  j["mode"] = to_string(info.mode);
  j["polarization"] = to_string(info.polarization);
  j["pulse_fwhm_ns"] = info.pulse_fwhm_ns ? json(*info.pulse_fwhm_ns) : json(nullptr);
  j["coherence_time_ns"] = info.coherence_time_ns ? json(*info.coherence_time_ns) : json(nullptr);
  j["source_digest"] = info.source_digest;
  return j;
}

}  // namespace

void write_curve(const fs::path& path, const NormalizedHistogram& h, const std::string& manifest_digest) {
  write_series_csv(path, h);
  json j = series_json(h);
  j["kind"] = "normalized_histogram";
  j["normalization_mode"] = to_string(h.mode);
  j["baseline_counts"] = h.baseline_counts;
  j["flags"] = h.flags;
  j["acquisition"] = info_json(h.info);
  j["csv_digest"] = file_digest(path);
  j["manifest_digest"] = manifest_digest;
  write_text_atomic(sidecar_path(path), j.dump(2) + "\n");
}

void write_curve(const fs::path& path, const DipCurve& d, const std::string& manifest_digest) {
  write_series_csv(path, d);
  json j = series_json(d);
  j["kind"] = "dip_curve";
  j["t_r_ns"] = d.t_r_ns;
  j["flags"] = d.flags;
  j["csv_digest"] = file_digest(path);
  j["manifest_digest"] = manifest_digest;
  write_text_atomic(sidecar_path(path), j.dump(2) + "\n");
}

Series read_curve(const fs::path& path) {
  const std::string text = read_text(path);
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  std::vector<double> xs, ys;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view v = trim(line);
    if (v.empty() || v.starts_with('#')) continue;
    if (!header) {
      if (v != "lag_ns,value") throw FormatError(path.string() + ": line " + std::to_string(line_no) + ": expected 'lag_ns,value'");
      header = true;
      continue;
    }
    const auto c = v.find(',');
    double x = 0, y = 0;
    if (c == std::string_view::npos || !parse_value(v.substr(0, c), x) || !parse_value(v.substr(c + 1), y))
      throw FormatError(path.string() + ": line " + std::to_string(line_no) + ": expected 'lag_ns,value'");
    xs.push_back(x);
    ys.push_back(y);
  }
  Series s;
  s.resize(static_cast<Eigen::Index>(xs.size()));
  for (std::size_t i = 0; i < xs.size(); ++i) {
    s.x[static_cast<Eigen::Index>(i)] = xs[i];
    s.y[static_cast<Eigen::Index>(i)] = ys[i];
  }
  s.variance.setOnes();
  const fs::path side = sidecar_path(path);
  if (fs::exists(side)) {
    json j;
    try {
      j = json::parse(read_text(side));
    } catch (const json::exception& e) {
      throw FormatError(side.string() + ": " + e.what());
    }
    auto load = [&](const char* key, Eigen::VectorXd& dst) {
      if (!j.contains(key)) return;
      const auto v = j[key].get<std::vector<double>>();
      if (v.size() != xs.size()) throw FormatError(side.string() + ": '" + key + "' length does not match the CSV");
      for (std::size_t i = 0; i < v.size(); ++i) dst[static_cast<Eigen::Index>(i)] = v[i];
    };
    load("variance", s.variance);
    load("unit", s.unit);
    if (j.contains("mask")) {
      const auto m = j["mask"].get<std::vector<bool>>();
      if (m.size() != xs.size()) throw FormatError(side.string() + ": 'mask' length does not match the CSV");
      s.mask = m;
    }
  }
  return s;
}

std::string fit_result_json(const FitResult& r, const std::string& input_digest, const std::string& manifest_digest) {
  json j;
  j["model"] = r.model;
  j["names"] = r.names;
  json params = json::object();
  for (std::size_t i = 0; i < r.names.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    json p;
    p["value"] = r.params[k];
    if (r.std_errors.size() && std::isfinite(r.std_errors[k]))
      p["std_error"] = r.std_errors[k];
    else
      p["std_error"] = nullptr;
    params[r.names[i]] = p;
  }
  j["parameters"] = params;
  json cov = json::array();
  for (Eigen::Index a = 0; a < r.covariance.rows(); ++a) {
    json row = json::array();
    for (Eigen::Index b = 0; b < r.covariance.cols(); ++b) row.push_back(r.covariance(a, b));
    cov.push_back(row);
  }
  j["covariance"] = cov;
  j["chi2"] = r.chi2;
  j["dof"] = r.dof;
  j["converged"] = r.converged;
  j["iterations"] = r.iterations;
  j["flags"] = r.flags;
  j["derived"] = r.derived;
  j["input_digest"] = input_digest;
  j["manifest_digest"] = manifest_digest;
  return j.dump(2) + "\n";
}

}  // namespace hom
