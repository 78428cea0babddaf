#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "litevla/data_pipeline.hpp"
#include "litevla/rng.hpp"
#include "litevla/sim.hpp"
#include "litevla/synthetic.hpp"
#include "oracles.hpp"

using namespace litevla;
namespace fs = std::filesystem;

namespace {

std::vector<std::int64_t> jittered_stream(Rng& rng, std::size_t n, std::int64_t period, std::int64_t jitter,
                                          std::int64_t start) {
    std::vector<std::int64_t> ts;
    for (std::size_t i = 0; i < n; ++i) {
        ts.push_back(start + static_cast<std::int64_t>(i) * period +
                     static_cast<std::int64_t>(rng.below(2 * jitter + 1)) - jitter);
    }
    std::sort(ts.begin(), ts.end());
    return ts;
}

void check_against_oracle(std::span<const std::int64_t> img, std::span<const std::int64_t> act, std::int64_t tol) {
    std::size_t dropped = 0;
    const auto ref = oracle::synchronize(img, act, tol, dropped);
    const auto got = synchronize(img, act, tol);
    REQUIRE(got.matches.size() == ref.size());
    CHECK(got.dropped == dropped);
    for (std::size_t i = 0; i < ref.size(); ++i) {
        REQUIRE(got.matches[i].image_index == ref[i].image);
        REQUIRE(got.matches[i].action_index == ref[i].action);
        REQUIRE(got.matches[i].delta_ns == ref[i].delta);
        REQUIRE(got.matches[i].delta_ns <= tol);
    }
}

fs::path fresh_dir(const std::string& name) {
    const auto d = fs::temp_directory_path() / name;
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

}  // namespace

TEST_CASE("synchronization examples") {
    const std::vector<std::int64_t> same{0, 10, 20, 30};
    const auto r = synchronize(same, same, 0);
    REQUIRE(r.matches.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(r.matches[i].action_index == i);
        CHECK(r.matches[i].delta_ns == 0);
    }
    const std::int64_t ms = 1'000'000;
    const std::vector<std::int64_t> img{100 * ms};
    const auto one = synchronize(img, std::vector<std::int64_t>{95 * ms, 107 * ms}, 10 * ms);
    REQUIRE(one.matches.size() == 1);
    CHECK(one.matches[0].action_index == 0);
    CHECK(one.matches[0].delta_ns == 5 * ms);
    const auto other = synchronize(img, std::vector<std::int64_t>{93 * ms, 105 * ms}, 10 * ms);
    CHECK(other.matches[0].action_index == 1);
    // equidistant neighbours and duplicates resolve to the earliest index
    const auto tie = synchronize(img, std::vector<std::int64_t>{90 * ms, 90 * ms, 110 * ms}, 10 * ms);
    CHECK(tie.matches[0].action_index == 0);
    const auto none = synchronize(img, std::vector<std::int64_t>{}, 10 * ms);
    CHECK(none.dropped == 1);
    const auto far = synchronize(img, std::vector<std::int64_t>{0}, 10 * ms);
    CHECK(far.dropped == 1);
    CHECK(far.matches.empty());
}

TEST_CASE("unsorted streams are rejected naming the inversion") {
    const std::vector<std::int64_t> good{1, 2, 3};
    const std::vector<std::int64_t> bad{1, 5, 4};
    try {
        synchronize(bad, good, 10);
        FAIL("expected SyncError");
    } catch (const SyncError& e) {
        CHECK(std::string(e.what()).find("index 2") != std::string::npos);
    }
    CHECK_THROWS_AS(synchronize(good, bad, 10), SyncError);
    CHECK_THROWS_AS(synchronize(good, good, -1), std::invalid_argument);
}

TEST_CASE("synchronization equals the brute-force oracle on random streams") {
    Rng rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t ni = rng.below(300), na = rng.below(300);
        const std::int64_t jitter = 1 + static_cast<std::int64_t>(rng.below(80));
        const auto img = jittered_stream(rng, ni, 100, jitter, static_cast<std::int64_t>(rng.below(50)));
        auto act = jittered_stream(rng, na, 1 + static_cast<std::int64_t>(rng.below(150)), jitter, 0);
        if (rng.bernoulli(0.3) && !act.empty()) act.insert(act.begin() + rng.below(act.size()), act[0]);
        std::sort(act.begin(), act.end());
        check_against_oracle(img, act, static_cast<std::int64_t>(rng.below(120)));
    }
}

TEST_CASE("velocity classes") {
    CHECK(velocity_to_class(0.0, 0.0) == Verb::Stop);
    CHECK(velocity_to_class(0.2, 0.0) == Verb::Forward);
    CHECK(velocity_to_class(-0.2, 0.0) == Verb::Backward);
    CHECK(velocity_to_class(0.0, 0.3) == Verb::TurnLeft);
    CHECK(velocity_to_class(0.0, -0.3) == Verb::TurnRight);
    CHECK(velocity_to_class(0.01, 0.04) == Verb::Stop);
    CHECK(velocity_to_class(0.03, 0.0) == Verb::Forward);
    CHECK(velocity_to_class(0.0, 0.06) == Verb::TurnLeft);
    CHECK(velocity_to_class(0.25, 0.5) == Verb::Forward);
    CHECK(velocity_to_class(0.1, 0.5) == Verb::TurnLeft);
    CHECK(velocity_to_class(-0.3, -0.2) == Verb::Backward);
    // grid: class depends only on which normalized component dominates
    for (int a = -10; a <= 10; ++a) {
        for (int b = -10; b <= 10; ++b) {
            const double v = a * 0.05, w = b * 0.1;
            const Verb c = velocity_to_class(v, w);
            const double nv = std::fabs(v) / 0.5, nw = std::fabs(w) / 1.0;
            if (std::fabs(v) < 0.02 && std::fabs(w) < 0.05) {
                CHECK(c == Verb::Stop);
            } else if (nw > nv) {
                CHECK(c == (w > 0 ? Verb::TurnLeft : Verb::TurnRight));
            } else {
                CHECK(c == (v > 0 ? Verb::Forward : Verb::Backward));
            }
        }
    }
}

TEST_CASE("image preprocessing") {
    SUBCASE("2x2 to 4x4 bilinear resize") {
        SceneImage img(2, 2);
        for (std::size_t y = 0; y < 2; ++y)
            for (std::size_t x = 0; x < 2; ++x)
                for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(2 * y + x + c);
        const auto out = resize_bilinear(img, 4, 4);
        // half-pixel centres sample source coordinates -0.25, 0.25, 0.75, 1.25 (clamped)
        const float t[4] = {0.0f, 0.25f, 0.75f, 1.0f};
        for (std::size_t y = 0; y < 4; ++y)
            for (std::size_t x = 0; x < 4; ++x)
                for (std::size_t c = 0; c < 3; ++c) CHECK(out.at(y, x, c) == doctest::Approx(2 * t[y] + t[x] + c));
    }
    SUBCASE("constant image equal to the mean normalizes to zero") {
        SceneImage img(8, 8);
        for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = 0.25f + 0.25f * static_cast<float>(i % 3);
        const NormalizationStats s({0.25f, 0.5f, 0.75f}, {0.1f, 0.2f, 0.3f});
        for (float v : preprocess_image(img, 4, s).data) CHECK(v == 0.0f);
    }
    SUBCASE("zero sigma is rejected") {
        CHECK_THROWS(NormalizationStats({0.0f, 0.0f, 0.0f}, {1.0f, 0.0f, 1.0f}));
    }
    SUBCASE("stats from images") {
        SceneImage a(2, 2), b(2, 2);
        for (std::size_t i = 0; i < a.data.size(); ++i) {
            a.data[i] = 0.0f;
            b.data[i] = 1.0f;
        }
        const std::vector<SceneImage> imgs{a, b};
        const auto s = NormalizationStats::from_images(imgs);
        for (int c = 0; c < 3; ++c) {
            CHECK(s.mean()[c] == doctest::Approx(0.5));
            CHECK(s.stddev()[c] == doctest::Approx(0.5));
        }
    }
}

TEST_CASE("flip augmentation") {
    Rng rng(3);
    SceneImage img(4, 6);
    for (auto& v : img.data) v = static_cast<float>(rng.uniform());
    SUBCASE("p = 0 is the identity") {
        for (int i = 0; i < 20; ++i) {
            const auto r = augment_flip(img, Verb::TurnLeft, 0.0, rng);
            CHECK_FALSE(r.flipped);
            CHECK(r.image == img);
            CHECK(r.label == Verb::TurnLeft);
        }
    }
    SUBCASE("a flipped left turn becomes a right turn") {
        const auto r = augment_flip(img, Verb::TurnLeft, 1.0, rng);
        CHECK(r.flipped);
        CHECK(r.label == Verb::TurnRight);
        for (std::size_t y = 0; y < 4; ++y)
            for (std::size_t x = 0; x < 6; ++x)
                for (std::size_t c = 0; c < 3; ++c) CHECK(r.image.at(y, x, c) == img.at(y, 5 - x, c));
        const auto back = augment_flip(r.image, r.label, 1.0, rng);
        CHECK(back.image == img);
        CHECK(back.label == Verb::TurnLeft);
    }
    SUBCASE("non-turn labels are unchanged") {
        for (Verb v : {Verb::Forward, Verb::Backward, Verb::Stop}) CHECK(mirror_verb(v) == v);
    }
}

TEST_CASE("flip labels agree with the mirrored scene") {
    Rng rng(4);
    std::size_t turns = 0;
    for (int i = 0; i < 300; ++i) {
        const WorldSpec w = random_world(rng);
        const Verb want = kAllVerbs[rng.below(5)];
        const RobotState s = sample_state_for(want, w, rng);
        const Verb label = expert_verb(s, w);
        const SceneImage img = render_scene(s, w);
        Rng always(0);
        const auto flipped = augment_flip(img, label, 1.0, always);
        const RobotState ms = mirror_state(s);
        const WorldSpec mw = mirror_world(w);
        CHECK(flipped.image == render_scene(ms, mw));
        CHECK(flipped.label == expert_verb(ms, mw));
        if (label == Verb::TurnLeft || label == Verb::TurnRight) ++turns;
    }
    CHECK(turns > 50);
}

TEST_CASE("stratified split") {
    SUBCASE("single class of 100") {
        const std::vector<Verb> labels(100, Verb::Forward);
        const auto s = stratified_split(labels, 0.85, 1);
        CHECK(std::count(s.begin(), s.end(), Split::Train) == 85);
    }
    SUBCASE("reference class shape") {
        std::vector<Verb> labels;
        for (Verb v : {Verb::Forward, Verb::TurnLeft, Verb::TurnRight, Verb::Stop}) labels.insert(labels.end(), 2990, v);
        labels.insert(labels.end(), 1152, Verb::Backward);
        Rng rng(5);
        rng.shuffle(std::span<Verb>(labels));
        const auto s = stratified_split(labels, 0.85, 7);
        for (Verb v : kAllVerbs) {
            const double n = static_cast<double>(std::count(labels.begin(), labels.end(), v));
            double train = 0;
            for (std::size_t i = 0; i < labels.size(); ++i) train += labels[i] == v && s[i] == Split::Train;
            CHECK(std::fabs(train - 0.85 * n) <= 1.0);
        }
        CHECK(stratified_split(labels, 0.85, 7) == s);
        CHECK(stratified_split(labels, 0.85, 8) != s);
    }
    SUBCASE("tiny classes keep one sample on each side") {
        const std::vector<Verb> labels{Verb::Stop, Verb::Stop, Verb::Forward, Verb::Forward, Verb::Forward};
        const auto s = stratified_split(labels, 0.85, 0);
        CHECK(s[0] != s[1]);
        CHECK(std::count(s.begin() + 2, s.end(), Split::Val) == 1);
    }
    SUBCASE("invalid input") {
        CHECK_THROWS_AS(stratified_split(std::vector<Verb>{Verb::Stop, Verb::Stop}, 1.0, 0), SplitError);
        CHECK_THROWS_AS(stratified_split(std::vector<Verb>{Verb::Stop}, 0.5, 0), SplitError);
    }
}

TEST_CASE("capture log records") {
    const CaptureRecord frame{1000, "frames/000001.png", std::nullopt, std::nullopt};
    const CaptureRecord cmd{1005, std::nullopt, 0.2, -0.1};
    CHECK(capture_record_from_line(capture_record_to_line(frame)) == frame);
    CHECK(capture_record_from_line(capture_record_to_line(cmd)) == cmd);
    CHECK(capture_record_to_line(cmd).find('\n') == std::string::npos);
    CHECK_THROWS_AS(capture_record_from_line("{}"), CaptureFormatError);
    CHECK_THROWS_AS(capture_record_from_line("not json"), CaptureFormatError);
    CHECK_THROWS_AS(capture_record_from_line(R"({"ts_ns":1,"image":null,"linear":0.1,"angular":null})"),
                    CaptureFormatError);
    CHECK_THROWS_AS(capture_record_from_line(R"({"ts_ns":1.5,"image":"a","linear":null,"angular":null})"),
                    CaptureFormatError);

    const auto dir = fresh_dir("litevla_capture_test");
    {
        CaptureLogWriter w(dir / "log.ndjson");
        w.write(frame);
        w.write(cmd);
        CHECK(w.count() == 2);
    }
    const auto back = read_capture_log(dir / "log.ndjson");
    REQUIRE(back.size() == 2);
    CHECK(back[0] == frame);
    CHECK(back[1] == cmd);
    {
        std::ofstream out(dir / "bad.ndjson");
        out << capture_record_to_line(cmd) << "\n" << capture_record_to_line(frame) << "\n";
    }
    CHECK_THROWS_AS(read_capture_log(dir / "bad.ndjson"), CaptureFormatError);
    fs::remove_all(dir);
}

TEST_CASE("synthetic session to manifest") {
    TeleopSessionConfig sc;
    sc.quotas = reference_class_quotas(400);
    sc.seed = 6;
    const TeleopSession session = generate_teleop_session(sc);
    std::size_t quota_total = 0;
    for (const auto& [v, n] : sc.quotas) quota_total += n;
    CHECK(quota_total == 400);
    CHECK(session.frames.size() == 400);

    PreprocessConfig pc;
    pc.seed = 6;
    const DatasetManifest m = build_manifest(session.log, pc, session.loader());
    CHECK(m.samples.size() + m.dropped_frames == 400);
    CHECK(m.dropped_frames > 0);
    CHECK(m.dropped_frames < 40);

    std::map<Verb, std::size_t> recount;
    for (const auto& s : m.samples) {
        ++recount[s.label];
        CHECK(s.delta_ns <= pc.tolerance_ns);
        CHECK(s.label == (s.flipped ? mirror_verb(s.source_label) : s.source_label));
        if (s.split == Split::Val) CHECK_FALSE(s.flipped);
    }
    for (const auto& [v, n] : m.class_counts) CHECK(recount[v] == n);
    CHECK(m.count(Split::Train) + m.count(Split::Val) == m.samples.size());

    // recorded labels agree with the operator's intent for matched frames
    std::map<std::string, std::size_t> frame_index;
    std::size_t fi = 0;
    for (const auto& r : session.log) {
        if (r.is_frame()) frame_index[*r.image] = fi++;
    }
    std::size_t agree = 0;
    for (const auto& s : m.samples) agree += session.expert_labels[frame_index.at(s.image)] == s.source_label;
    CHECK(agree == m.samples.size());

    // train-split statistics only
    std::vector<SceneImage> train_imgs;
    for (const auto& s : m.samples) {
        if (s.split == Split::Train) train_imgs.push_back(resize_bilinear(session.frames.at(s.image), 32, 32));
    }
    CHECK(m.stats == NormalizationStats::from_images(train_imgs));

    const auto dir = fresh_dir("litevla_manifest_test");
    save_manifest(dir / "manifest.json", m);
    CHECK(load_manifest(dir / "manifest.json") == m);
    fs::remove_all(dir);

    CHECK(build_manifest(session.log, pc, session.loader()) == m);

    const auto val = materialize(m, Split::Val, session.loader(), PolicyConfig{}.action_vocab);
    CHECK(val.size() == m.count(Split::Val));
    CHECK(val.front().image.height == 32);
}

TEST_CASE("reference quotas follow the corpus proportions") {
    const auto q = reference_class_quotas(13112);
    CHECK(q.at(Verb::Backward) == 1152);
    CHECK(q.at(Verb::Forward) == 2990);
    const auto small = reference_class_quotas(6000);
    std::size_t total = 0;
    for (const auto& [v, n] : small) total += n;
    CHECK(total == 6000);
    CHECK(small.at(Verb::Backward) < small.at(Verb::Stop));
}
