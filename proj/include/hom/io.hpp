#pragma once

// File formats: experiment config, event streams (text and binary),
// histogram / curve CSVs with JSON sidecars, and fit results.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <string_view>

#include "hom/fit.hpp"
#include "hom/histogram.hpp"
#include "hom/simulate.hpp"

namespace hom {

/// Shortest round-trip decimal representation.
std::string format_number(double value);

/// 64-bit FNV-1a, hex encoded.
std::string digest_hex(std::string_view bytes);
std::string file_digest(const std::filesystem::path& path);

/// Writes to a sibling temporary and renames over the target on commit().
/// An uncommitted file is removed on destruction.
class AtomicFile {
 public:
  explicit AtomicFile(std::filesystem::path target, bool binary = false);
  AtomicFile(const AtomicFile&) = delete;
  AtomicFile& operator=(const AtomicFile&) = delete;
  ~AtomicFile();

  std::ofstream& stream() { return out_; }
  void commit();

 private:
  std::filesystem::path target_;
  std::filesystem::path temp_;
  std::ofstream out_;
  bool committed_ = false;
};

void write_text_atomic(const std::filesystem::path& path, std::string_view content);
std::string read_text(const std::filesystem::path& path);

// --- config ---------------------------------------------------------------

/// Parses the flat `key = value` experiment config. `#` starts a comment.
/// Unknown or duplicate keys, malformed values and inconsistent noise
/// settings throw ConfigError naming the line and key. The result is validated.
SimConfig parse_config(std::string_view text);
SimConfig load_config(const std::filesystem::path& path);
/// Canonical `key = value` lines; parse_config(format_config(c)) == c.
std::string format_config(const SimConfig& config);

// --- event streams --------------------------------------------------------

enum class StreamFormat { Text, Binary };

inline constexpr char kBinaryMagic[8] = {'H', 'O', 'M', 'E', 'V', 'T', 'B', '\0'};
inline constexpr std::uint32_t kBinaryVersion = 1;

/// Text: `key = value` header (config echo plus frame range, singles and
/// manifest digest), the column line `frame_index,detector,time_ps`, then one
/// event per line with detector 1 or 2.
/// Binary: 16-byte header (magic, u32 version, u32 flags), u32 header length,
/// header text as above, u64 event count, then per event i64 frame_index,
/// u8 detector, i64 time_ps; all little-endian.
void write_stream(const std::filesystem::path& path, const EventStream& stream, StreamFormat format,
                  const std::string& manifest_digest = {});
/// Detects the format from the magic bytes. Malformed content throws
/// FormatError with the offending line number.
EventStream read_stream(const std::filesystem::path& path);
std::string stream_header(const EventStream& stream, const std::string& manifest_digest);

// --- histograms and curves -------------------------------------------------

/// `# key = value` metadata, then `bin_center_ps,counts`.
void write_histogram_csv(const std::filesystem::path& path, const CoincidenceHistogram& h,
                         const std::string& manifest_digest = {});
CoincidenceHistogram read_histogram_csv(const std::filesystem::path& path);

/// `lag_ns,value` CSV plus `<path>.json` sidecar holding metadata, mask,
/// variances and count units.
void write_curve(const std::filesystem::path& path, const NormalizedHistogram& h,
                 const std::string& manifest_digest = {});
void write_curve(const std::filesystem::path& path, const DipCurve& d, const std::string& manifest_digest = {});
/// Reads a curve CSV; the sidecar is used when present.
Series read_curve(const std::filesystem::path& path);
std::filesystem::path sidecar_path(const std::filesystem::path& csv);

// --- fit results ----------------------------------------------------------

std::string fit_result_json(const FitResult& r, const std::string& input_digest = {},
                            const std::string& manifest_digest = {});

const char* to_string(Mode m);
const char* to_string(Polarization p);
const char* to_string(NormalizationMode m);

}  // namespace hom
