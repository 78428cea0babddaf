#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "litevla/action_grammar.hpp"
#include "litevla/image.hpp"
#include "litevla/train.hpp"

namespace litevla {

class Rng;

// One line of the capture log. Frame events carry `image`; command events
// carry `linear`/`angular`.
struct CaptureRecord {
    std::int64_t ts_ns = 0;
    std::optional<std::string> image;
    std::optional<double> linear;
    std::optional<double> angular;

    bool is_frame() const { return image.has_value(); }
    bool operator==(const CaptureRecord&) const = default;
};

class CaptureFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string capture_record_to_line(const CaptureRecord& r);
CaptureRecord capture_record_from_line(const std::string& line);

// Append-only NDJSON writer; each record is flushed as one line.
class CaptureLogWriter {
public:
    explicit CaptureLogWriter(const std::filesystem::path& path, bool append = false);
    ~CaptureLogWriter();
    CaptureLogWriter(const CaptureLogWriter&) = delete;
    CaptureLogWriter& operator=(const CaptureLogWriter&) = delete;

    void write(const CaptureRecord& r);
    std::size_t count() const { return count_; }

private:
    std::FILE* file_ = nullptr;
    std::size_t count_ = 0;
};

// Rejects lines that are malformed or whose timestamps go backwards.
std::vector<CaptureRecord> read_capture_log(const std::filesystem::path& path);

class SyncError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct SyncMatch {
    std::size_t image_index = 0;
    std::size_t action_index = 0;
    std::int64_t delta_ns = 0;  // |image ts - action ts|

    bool operator==(const SyncMatch&) const = default;
};

struct SyncResult {
    std::vector<SyncMatch> matches;
    std::size_t dropped = 0;
};

inline constexpr std::int64_t kDefaultSyncToleranceNs = 100'000'000;

// Nearest action per image (earliest on ties) with one forward pass over each
// list. Both lists must be sorted.
SyncResult synchronize(std::span<const std::int64_t> image_ts, std::span<const std::int64_t> action_ts,
                       std::int64_t tolerance_ns);

struct ClassThresholds {
    double linear_deadband = 0.02;   // m/s
    double angular_deadband = 0.05;  // rad/s
    SafetyCaps caps;
};

// Dominance compares |v|/cap_v against |w|/cap_w; equality goes to translation.
Verb velocity_to_class(double linear, double angular, const ClassThresholds& t = {});

Verb mirror_verb(Verb v);

SceneImage preprocess_image(const SceneImage& img, std::size_t target_size, const NormalizationStats& stats);

struct FlipResult {
    SceneImage image;
    Verb label;
    bool flipped = false;
};

FlipResult augment_flip(const SceneImage& img, Verb label, double p, Rng& rng);

enum class Split { Train, Val };

class SplitError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Per class: n_train from a largest-remainder apportionment of ratio * N,
// clamped to [1, n_c - 1]; members chosen by a seeded shuffle.
std::vector<Split> stratified_split(std::span<const Verb> labels, double ratio, std::uint64_t seed);

struct ManifestSample {
    std::string image;
    Verb source_label = Verb::Stop;  // from the recorded velocities
    Verb label = Verb::Stop;         // after augmentation
    bool flipped = false;
    Split split = Split::Train;
    std::int64_t image_ts_ns = 0;
    std::int64_t action_ts_ns = 0;
    std::int64_t delta_ns = 0;

    bool operator==(const ManifestSample&) const = default;
};

struct DatasetManifest {
    std::uint64_t seed = 0;
    std::int64_t tolerance_ns = kDefaultSyncToleranceNs;
    double split_ratio = 0.85;
    double flip_probability = 0.0;
    std::size_t target_size = 32;
    NormalizationStats stats;
    std::map<Verb, std::size_t> class_counts;  // by final label
    std::size_t dropped_frames = 0;
    nlohmann::json provenance = nlohmann::json::object();
    std::vector<ManifestSample> samples;

    std::size_t count(Split s) const;
    nlohmann::json to_json() const;
    static DatasetManifest from_json(const nlohmann::json& j);
    bool operator==(const DatasetManifest&) const = default;
};

void save_manifest(const std::filesystem::path& path, const DatasetManifest& m);
DatasetManifest load_manifest(const std::filesystem::path& path);

struct PreprocessConfig {
    std::size_t target_size = 32;
    std::int64_t tolerance_ns = kDefaultSyncToleranceNs;
    double split_ratio = 0.85;
    double flip_probability = 0.5;
    std::uint64_t seed = 0;
    ClassThresholds thresholds;

    nlohmann::json to_json() const;
    static PreprocessConfig from_json(const nlohmann::json& j);
};

using ImageLoader = std::function<SceneImage(const std::string& ref)>;

// Loader resolving refs relative to `root` (PNG or raw blobs).
ImageLoader file_image_loader(const std::filesystem::path& root);

// sync -> label -> split -> train-split statistics -> flip augmentation.
DatasetManifest build_manifest(std::span<const CaptureRecord> log, const PreprocessConfig& cfg,
                               const ImageLoader& load);

// Loads, resizes, flips (when recorded) and normalises every sample of `split`.
std::vector<LabeledImage> materialize(const DatasetManifest& m, Split split, const ImageLoader& load,
                                      std::span<const Verb> vocab);

}  // namespace litevla
