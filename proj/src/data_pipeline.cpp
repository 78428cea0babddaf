#include "litevla/data_pipeline.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "litevla/rng.hpp"

namespace litevla {

using nlohmann::json;

std::string capture_record_to_line(const CaptureRecord& r) {
    json j;
    j["ts_ns"] = r.ts_ns;
    j["image"] = r.image ? json(*r.image) : json(nullptr);
    j["linear"] = r.linear ? json(*r.linear) : json(nullptr);
    j["angular"] = r.angular ? json(*r.angular) : json(nullptr);
    return j.dump();
}

CaptureRecord capture_record_from_line(const std::string& line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::parse_error& e) {
        throw CaptureFormatError(std::string("capture line is not JSON: ") + e.what());
    }
    if (!j.is_object()) throw CaptureFormatError("capture line is not an object");
    for (const char* key : {"ts_ns", "image", "linear", "angular"}) {
        if (!j.contains(key)) throw CaptureFormatError(std::string("capture line lacks field '") + key + "'");
    }
    CaptureRecord r;
    if (!j["ts_ns"].is_number_integer()) throw CaptureFormatError("ts_ns must be an integer");
    r.ts_ns = j["ts_ns"].get<std::int64_t>();
    if (!j["image"].is_null()) {
        if (!j["image"].is_string()) throw CaptureFormatError("image must be a string or null");
        r.image = j["image"].get<std::string>();
    }
    for (auto [key, field] : {std::pair{"linear", &r.linear}, std::pair{"angular", &r.angular}}) {
        const auto& v = j[key];
        if (v.is_null()) continue;
        if (!v.is_number()) throw CaptureFormatError(std::string(key) + " must be a number or null");
        *field = v.get<double>();
        if (!std::isfinite(**field)) throw CaptureFormatError(std::string(key) + " is not finite");
    }
    const bool frame = r.image.has_value();
    const bool command = r.linear.has_value() && r.angular.has_value();
    if (frame == command || (!frame && (r.linear.has_value() != r.angular.has_value()))) {
        throw CaptureFormatError("record must be either a frame (image) or a command (linear and angular)");
    }
    return r;
}

CaptureLogWriter::CaptureLogWriter(const std::filesystem::path& path, bool append) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    file_ = std::fopen(path.c_str(), append ? "ab" : "wb");
    if (!file_) {
        throw std::runtime_error("cannot open capture log " + path.string() + ": " + std::strerror(errno));
    }
}

CaptureLogWriter::~CaptureLogWriter() {
    if (file_) std::fclose(file_);
}

void CaptureLogWriter::write(const CaptureRecord& r) {
    const std::string line = capture_record_to_line(r) + "\n";
    if (std::fwrite(line.data(), 1, line.size(), file_) != line.size() || std::fflush(file_) != 0) {
        throw std::runtime_error("failed to append to capture log");
    }
    ++count_;
}

std::vector<CaptureRecord> read_capture_log(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open capture log " + path.string());
    std::vector<CaptureRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(capture_record_from_line(line));
        } catch (const CaptureFormatError& e) {
            throw CaptureFormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        if (out.size() > 1 && out.back().ts_ns < out[out.size() - 2].ts_ns) {
            throw CaptureFormatError(path.string() + ":" + std::to_string(lineno) + ": timestamp goes backwards");
        }
    }
    return out;
}

namespace {

void require_sorted(std::span<const std::int64_t> ts, const char* what) {
    for (std::size_t i = 1; i < ts.size(); ++i) {
        if (ts[i] < ts[i - 1]) {
            throw SyncError(std::string(what) + " timestamps are not sorted: index " + std::to_string(i) + " (" +
                            std::to_string(ts[i]) + ") precedes index " + std::to_string(i - 1) + " (" +
                            std::to_string(ts[i - 1]) + ")");
        }
    }
}

}  // namespace

SyncResult synchronize(std::span<const std::int64_t> image_ts, std::span<const std::int64_t> action_ts,
                       std::int64_t tolerance_ns) {
    if (tolerance_ns < 0) throw std::invalid_argument("sync tolerance must be non-negative");
    require_sorted(image_ts, "image");
    require_sorted(action_ts, "action");
    SyncResult r;
    if (action_ts.empty()) {
        r.dropped = image_ts.size();
        return r;
    }
    // k: first action with ts >= t. prev_start: lowest index sharing ts[k-1].
    std::size_t k = 0;
    std::size_t prev_start = 0;
    for (std::size_t i = 0; i < image_ts.size(); ++i) {
        const std::int64_t t = image_ts[i];
        while (k < action_ts.size() && action_ts[k] < t) {
            if (k == 0 || action_ts[k] != action_ts[k - 1]) prev_start = k;
            ++k;
        }
        std::size_t best;
        if (k == 0) {
            best = 0;
        } else if (k == action_ts.size()) {
            best = prev_start;
        } else {
            best = (t - action_ts[k - 1] <= action_ts[k] - t) ? prev_start : k;
        }
        const std::int64_t dt = t >= action_ts[best] ? t - action_ts[best] : action_ts[best] - t;
        if (dt > tolerance_ns) {
            ++r.dropped;
            continue;
        }
        r.matches.push_back({i, best, dt});
    }
    return r;
}

Verb velocity_to_class(double linear, double angular, const ClassThresholds& t) {
    const double av = std::abs(linear), aw = std::abs(angular);
    if (av < t.linear_deadband && aw < t.angular_deadband) return Verb::Stop;
    if (aw / t.caps.max_angular > av / t.caps.max_linear) return angular > 0.0 ? Verb::TurnLeft : Verb::TurnRight;
    if (linear > 0.0) return Verb::Forward;
    if (linear < 0.0) return Verb::Backward;
    return Verb::Stop;
}

Verb mirror_verb(Verb v) {
    if (v == Verb::TurnLeft) return Verb::TurnRight;
    if (v == Verb::TurnRight) return Verb::TurnLeft;
    return v;
}

SceneImage preprocess_image(const SceneImage& img, std::size_t target_size, const NormalizationStats& stats) {
    return normalize(resize_bilinear(img, target_size, target_size), stats);
}

FlipResult augment_flip(const SceneImage& img, Verb label, double p, Rng& rng) {
    if (p > 0.0 && rng.bernoulli(p)) return {flip_horizontal(img), mirror_verb(label), true};
    return {img, label, false};
}

std::vector<Split> stratified_split(std::span<const Verb> labels, double ratio, std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw SplitError("split ratio must lie strictly between 0 and 1");
    std::map<Verb, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < labels.size(); ++i) members[labels[i]].push_back(i);
    for (const auto& [v, idx] : members) {
        if (idx.size() < 2) {
            throw SplitError("class " + std::string(verb_name(v)) + " has " + std::to_string(idx.size()) +
                             " sample(s); stratified split needs at least 2");
        }
    }
    // Largest remainder apportionment of round(ratio * N) train slots.
    struct Quota {
        Verb verb;
        std::size_t n;
        std::size_t take;
        double rem;
    };
    std::vector<Quota> quotas;
    std::size_t assigned = 0;
    for (const auto& [v, idx] : members) {
        const double exact = ratio * static_cast<double>(idx.size());
        const auto fl = static_cast<std::size_t>(std::floor(exact));
        quotas.push_back({v, idx.size(), fl, exact - static_cast<double>(fl)});
        assigned += fl;
    }
    const auto target = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(labels.size())));
    std::vector<std::size_t> order(quotas.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return quotas[a].rem > quotas[b].rem; });
    for (std::size_t i = 0; assigned < target && i < order.size(); ++i, ++assigned) ++quotas[order[i]].take;
    for (auto& q : quotas) q.take = std::clamp<std::size_t>(q.take, 1, q.n - 1);

    std::vector<Split> out(labels.size(), Split::Val);
    Rng rng(seed);
    for (const auto& q : quotas) {
        std::vector<std::size_t> idx = members[q.verb];
        rng.shuffle(std::span<std::size_t>(idx));
        for (std::size_t i = 0; i < q.take; ++i) out[idx[i]] = Split::Train;
    }
    return out;
}

std::size_t DatasetManifest::count(Split s) const {
    return static_cast<std::size_t>(
        std::count_if(samples.begin(), samples.end(), [&](const ManifestSample& m) { return m.split == s; }));
}

namespace {

Verb verb_or_throw(const std::string& name) {
    auto v = verb_from_name(name);
    if (!v) throw std::invalid_argument("unknown action class '" + name + "' in manifest");
    return *v;
}

}  // namespace

json DatasetManifest::to_json() const {
    json j;
    j["format"] = "litevla-manifest";
    j["version"] = 1;
    j["seed"] = seed;
    j["tolerance_ns"] = tolerance_ns;
    j["split_ratio"] = split_ratio;
    j["flip_probability"] = flip_probability;
    j["target_size"] = target_size;
    j["stats"] = {{"mean", stats.mean()}, {"std", stats.stddev()}};
    j["class_counts"] = json::object();
    for (const auto& [v, n] : class_counts) j["class_counts"][std::string(verb_name(v))] = n;
    j["counts"] = {{"train", count(Split::Train)}, {"val", count(Split::Val)}, {"dropped_frames", dropped_frames}};
    j["provenance"] = provenance;
    j["samples"] = json::array();
    for (const auto& s : samples) {
        j["samples"].push_back({{"image", s.image},
                                {"source_label", verb_name(s.source_label)},
                                {"label", verb_name(s.label)},
                                {"flipped", s.flipped},
                                {"split", s.split == Split::Train ? "train" : "val"},
                                {"image_ts_ns", s.image_ts_ns},
                                {"action_ts_ns", s.action_ts_ns},
                                {"delta_ns", s.delta_ns}});
    }
    return j;
}

DatasetManifest DatasetManifest::from_json(const json& j) {
    if (j.value("format", "") != "litevla-manifest") throw std::invalid_argument("not a litevla dataset manifest");
    DatasetManifest m;
    m.seed = j.at("seed").get<std::uint64_t>();
    m.tolerance_ns = j.at("tolerance_ns").get<std::int64_t>();
    m.split_ratio = j.at("split_ratio").get<double>();
    m.flip_probability = j.at("flip_probability").get<double>();
    m.target_size = j.at("target_size").get<std::size_t>();
    m.stats = NormalizationStats(j.at("stats").at("mean").get<std::array<float, 3>>(),
                                 j.at("stats").at("std").get<std::array<float, 3>>());
    for (const auto& [name, n] : j.at("class_counts").items()) m.class_counts[verb_or_throw(name)] = n.get<std::size_t>();
    m.dropped_frames = j.at("counts").at("dropped_frames").get<std::size_t>();
    m.provenance = j.value("provenance", json::object());
    for (const auto& s : j.at("samples")) {
        ManifestSample ms;
        ms.image = s.at("image").get<std::string>();
        ms.source_label = verb_or_throw(s.at("source_label").get<std::string>());
        ms.label = verb_or_throw(s.at("label").get<std::string>());
        ms.flipped = s.at("flipped").get<bool>();
        const auto split = s.at("split").get<std::string>();
        if (split != "train" && split != "val") throw std::invalid_argument("unknown split '" + split + "'");
        ms.split = split == "train" ? Split::Train : Split::Val;
        ms.image_ts_ns = s.at("image_ts_ns").get<std::int64_t>();
        ms.action_ts_ns = s.at("action_ts_ns").get<std::int64_t>();
        ms.delta_ns = s.at("delta_ns").get<std::int64_t>();
        m.samples.push_back(std::move(ms));
    }
    std::size_t total = 0;
    for (const auto& [v, n] : m.class_counts) total += n;
    if (total != m.samples.size()) throw std::invalid_argument("manifest class counts do not sum to the sample count");
    return m;
}

void save_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write manifest " + path.string());
    out << m.to_json().dump(1) << "\n";
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest " + path.string());
    try {
        return DatasetManifest::from_json(json::parse(in));
    } catch (const json::exception& e) {
        throw std::invalid_argument("malformed manifest " + path.string() + ": " + e.what());
    }
}

json PreprocessConfig::to_json() const {
    return {{"target_size", target_size},
            {"tolerance_ns", tolerance_ns},
            {"split_ratio", split_ratio},
            {"flip_probability", flip_probability},
            {"seed", seed},
            {"linear_deadband", thresholds.linear_deadband},
            {"angular_deadband", thresholds.angular_deadband},
            {"max_linear", thresholds.caps.max_linear},
            {"max_angular", thresholds.caps.max_angular}};
}

PreprocessConfig PreprocessConfig::from_json(const json& j) {
    PreprocessConfig c;
    c.target_size = j.value("target_size", c.target_size);
    c.tolerance_ns = j.value("tolerance_ns", c.tolerance_ns);
    c.split_ratio = j.value("split_ratio", c.split_ratio);
    c.flip_probability = j.value("flip_probability", c.flip_probability);
    c.seed = j.value("seed", c.seed);
    c.thresholds.linear_deadband = j.value("linear_deadband", c.thresholds.linear_deadband);
    c.thresholds.angular_deadband = j.value("angular_deadband", c.thresholds.angular_deadband);
    c.thresholds.caps.max_linear = j.value("max_linear", c.thresholds.caps.max_linear);
    c.thresholds.caps.max_angular = j.value("max_angular", c.thresholds.caps.max_angular);
    if (c.target_size == 0) throw std::invalid_argument("target_size must be positive");
    if (!(c.flip_probability >= 0.0 && c.flip_probability <= 1.0)) {
        throw std::invalid_argument("flip_probability must lie in [0, 1]");
    }
    return c;
}

ImageLoader file_image_loader(const std::filesystem::path& root) {
    return [root](const std::string& ref) {
        const std::filesystem::path p(ref);
        return load_image(p.is_absolute() ? p : root / p);
    };
}

DatasetManifest build_manifest(std::span<const CaptureRecord> log, const PreprocessConfig& cfg,
                               const ImageLoader& load) {
    std::vector<std::int64_t> frame_ts, action_ts;
    std::vector<const CaptureRecord*> frames, actions;
    for (const auto& r : log) {
        if (r.is_frame()) {
            frames.push_back(&r);
            frame_ts.push_back(r.ts_ns);
        } else {
            actions.push_back(&r);
            action_ts.push_back(r.ts_ns);
        }
    }
    const SyncResult sync = synchronize(frame_ts, action_ts, cfg.tolerance_ns);

    DatasetManifest m;
    m.seed = cfg.seed;
    m.tolerance_ns = cfg.tolerance_ns;
    m.split_ratio = cfg.split_ratio;
    m.flip_probability = cfg.flip_probability;
    m.target_size = cfg.target_size;
    m.dropped_frames = sync.dropped;
    m.provenance = {{"frames", frames.size()}, {"commands", actions.size()}, {"matched", sync.matches.size()}};

    std::vector<Verb> labels;
    for (const auto& match : sync.matches) {
        const CaptureRecord& a = *actions[match.action_index];
        ManifestSample s;
        s.image = *frames[match.image_index]->image;
        s.source_label = velocity_to_class(*a.linear, *a.angular, cfg.thresholds);
        s.label = s.source_label;
        s.image_ts_ns = frames[match.image_index]->ts_ns;
        s.action_ts_ns = a.ts_ns;
        s.delta_ns = match.delta_ns;
        labels.push_back(s.source_label);
        m.samples.push_back(std::move(s));
    }
    if (m.samples.empty()) throw std::invalid_argument("no frame could be matched to a command");

    const std::vector<Split> splits = stratified_split(labels, cfg.split_ratio, cfg.seed);
    std::vector<SceneImage> train_images;
    for (std::size_t i = 0; i < m.samples.size(); ++i) {
        m.samples[i].split = splits[i];
        if (splits[i] == Split::Train) {
            train_images.push_back(resize_bilinear(load(m.samples[i].image), cfg.target_size, cfg.target_size));
        }
    }
    m.stats = NormalizationStats::from_images(train_images);

    // Only training samples are augmented; validation stays as recorded.
    Rng rng(cfg.seed ^ 0xF11Bull);
    for (auto& s : m.samples) {
        if (s.split == Split::Train && cfg.flip_probability > 0.0 && rng.bernoulli(cfg.flip_probability)) {
            s.flipped = true;
            s.label = mirror_verb(s.source_label);
        }
        ++m.class_counts[s.label];
    }
    return m;
}

std::vector<LabeledImage> materialize(const DatasetManifest& m, Split split, const ImageLoader& load,
                                      std::span<const Verb> vocab) {
    std::vector<LabeledImage> out;
    for (const auto& s : m.samples) {
        if (s.split != split) continue;
        const auto it = std::find(vocab.begin(), vocab.end(), s.label);
        if (it == vocab.end()) {
            throw std::invalid_argument("label " + std::string(verb_name(s.label)) + " is not in the action vocabulary");
        }
        SceneImage img = resize_bilinear(load(s.image), m.target_size, m.target_size);
        if (s.flipped) img = flip_horizontal(img);
        out.push_back({normalize(img, m.stats), static_cast<std::size_t>(it - vocab.begin())});
    }
    return out;
}

}  // namespace litevla
