#include <sys/wait.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "litevla/checkpoint.hpp"
#include "litevla/data_pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kWork = fs::temp_directory_path() / "litevla_cli_test";

struct Result {
    int code;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

Result run(const std::string& args) {
    const auto out = kWork / "stdout.txt", err = kWork / "stderr.txt";
    const std::string cmd = std::string(LITEVLA_CLI_PATH) + " " + args + " > " + out.string() + " 2> " + err.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

std::string p(const std::string& rel) { return (kWork / rel).string(); }

struct Workspace {
    Workspace() {
        fs::remove_all(kWork);
        fs::create_directories(kWork);
    }
    ~Workspace() { fs::remove_all(kWork); }
};

}  // namespace

TEST_CASE("usage errors and exit codes") {
    Workspace ws;
    SUBCASE("unknown subcommand") {
        const auto r = run("frobnicate");
        CHECK(r.code == 2);
        const auto j = json::parse(r.err);
        CHECK(j["exit_code"] == 2);
        CHECK(j["error"] == "usage");
    }
    SUBCASE("no subcommand") { CHECK(run("").code == 2); }
    SUBCASE("help") { CHECK(run("--help").code == 0); }
    SUBCASE("missing checkpoint") {
        const auto r = run("run --checkpoint " + p("nope.lvla"));
        CHECK(r.code == 3);
        CHECK(json::parse(r.err)["error"] == "missing_checkpoint");
    }
    SUBCASE("unreadable report") { CHECK(run("report --in " + p("nope.json")).code == 1); }
    SUBCASE("bad config") {
        std::ofstream(kWork / "cfg.json") << R"({"mystery": {}})";
        CHECK(run("-c " + p("cfg.json") + " report --in x").code == 4);
    }
}

TEST_CASE("pipeline end to end with deterministic artifacts") {
    Workspace ws;
    REQUIRE(run("capture --synthetic 300 --seed 5 -o " + p("cap")).code == 0);
    REQUIRE(run("capture --synthetic 300 --seed 5 -o " + p("cap2")).code == 0);
    CHECK(slurp(kWork / "cap/capture.ndjson") == slurp(kWork / "cap2/capture.ndjson"));

    const auto pre = run("preprocess --log " + p("cap/capture.ndjson") + " -o " + p("data/manifest.json"));
    REQUIRE(pre.code == 0);
    const auto summary = json::parse(pre.out);
    CHECK(summary["train"].get<int>() > 0);
    CHECK(summary["val"].get<int>() > 0);
    REQUIRE(run("preprocess --log " + p("cap/capture.ndjson") + " -o " + p("data/manifest2.json")).code == 0);
    CHECK(slurp(kWork / "data/manifest.json") == slurp(kWork / "data/manifest2.json"));
    const auto m = litevla::load_manifest(kWork / "data/manifest.json");
    for (const auto& s : m.samples) CHECK(fs::exists(kWork / "data" / s.image));

    const auto tr = run("train --manifest " + p("data/manifest.json") + " --epochs 1 -o " + p("ck/fp32.lvla"));
    REQUIRE(tr.code == 0);
    CHECK(tr.out.find("\"epoch\":1") != std::string::npos);
    REQUIRE(run("train --manifest " + p("data/manifest.json") + " --epochs 1 -o " + p("ck/fp32b.lvla")).code == 0);
    CHECK(slurp(kWork / "ck/fp32.lvla") == slurp(kWork / "ck/fp32b.lvla"));

    REQUIRE(run("quantize --in " + p("ck/fp32.lvla") + " --mode hybrid -o " + p("ck/hybrid.lvla")).code == 0);
    REQUIRE(run("quantize --in " + p("ck/fp32.lvla") + " --mode hybrid -o " + p("ck/hybrid2.lvla")).code == 0);
    CHECK(slurp(kWork / "ck/hybrid.lvla") == slurp(kWork / "ck/hybrid2.lvla"));
    const auto table = litevla::read_tensor_table(litevla::read_file_bytes(kWork / "ck/hybrid.lvla"));
    for (const auto& e : table) {
        if (e.name.starts_with("head.")) CHECK(e.dtype == litevla::DType::FP32);
    }
    CHECK(run("quantize --in " + p("ck/hybrid.lvla") + " --mode nf4 -o " + p("ck/x.lvla")).code == 1);
    CHECK(run("quantize --in " + p("ck/fp32.lvla") + " --mode int3 -o " + p("ck/x.lvla")).code == 2);

    const auto ep = run("run --checkpoint " + p("ck/hybrid.lvla") + " --episodes 2 --duration 20 --latency 1.0 -o " +
                        p("runs/h.json"));
    REQUIRE(ep.code == 0);
    REQUIRE(run("run --checkpoint " + p("ck/hybrid.lvla") + " --episodes 2 --duration 20 --latency 1.0 -o " +
                p("runs/h2.json")).code == 0);
    CHECK(slurp(kWork / "runs/h.json") == slurp(kWork / "runs/h2.json"));

    const auto b = run("bench --checkpoint " + p("ck/fp32.lvla") + " --inputs 30 -o " + p("bench.json"));
    REQUIRE(b.code == 0);
    CHECK(b.out.find("Model") != std::string::npos);
    const auto rep = run("report --in " + p("bench.json"));
    REQUIRE(rep.code == 0);
    CHECK(rep.out.find("hybrid") != std::string::npos);
    CHECK(json::parse(run("report --in " + p("bench.json") + " --json").out)["rows"].size() == 3);

    SUBCASE("config mismatch") {
        std::ofstream(kWork / "cfg.json") << R"({"policy": {"d_model": 32}})";
        CHECK(run("-c " + p("cfg.json") + " run --checkpoint " + p("ck/fp32.lvla")).code == 4);
    }
}
