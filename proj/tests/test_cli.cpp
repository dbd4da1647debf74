#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "a2bis/metrics.hpp"
#include "a2bis/tensor_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

static std::string g_cli;  // path to the binary under test

namespace {

struct RunResult {
    int code = -1;
    std::string out;
};

RunResult run(const std::string& args) {
    RunResult r;
    std::string cmd = g_cli + " " + args + " 2>/dev/null";
    FILE* p = popen(cmd.c_str(), "r");
    REQUIRE(p != nullptr);
    char buf[4096];
    size_t n;
    while ((n = fread(buf, 1, sizeof(buf), p)) > 0) r.out.append(buf, n);
    int status = pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

fs::path workdir() {
    fs::path d = fs::temp_directory_path() / "a2bis_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

void write_text(const fs::path& p, const std::string& s) {
    std::ofstream f(p);
    f << s;
}

json read_json(const fs::path& p) {
    std::ifstream f(p);
    REQUIRE(f.good());
    return json::parse(f);
}

}  // namespace

TEST_CASE("boxdist: identical boxes print D=0, loss=0") {
    RunResult r = run("boxdist --a 0,0,4,4,0 --b 0,0,4,4,0");
    CHECK(r.code == 0);
    CHECK(r.out == "D 0\nloss 0\n");
}

TEST_CASE("boxdist: known distance from the paper example") {
    // 4x4 vs 2x2 at the same center: D = (2-1)^2 + (2-1)^2 = 2
    RunResult r = run("boxdist --a 0,0,4,4,0 --b 0,0,2,2,0");
    CHECK(r.code == 0);
    CHECK(r.out.substr(0, 4) == "D 2\n");
}

TEST_CASE("usage errors exit 2") {
    CHECK(run("bogus-subcommand").code == 2);
    CHECK(run("").code == 2);
    CHECK(run("boxdist --a 1,2,3").code == 2);      // malformed box
    CHECK(run("synth --scenes 3").code == 2);       // missing --out
}

TEST_CASE("runtime errors exit 1") {
    CHECK(run("eval --pred /nonexistent.json --gt /nonexistent.json --out /tmp/x.json")
              .code == 1);
    CHECK(run("targets --annotations /nonexistent.json --n-cls 2 --out-prefix /tmp/t")
              .code == 1);
}

TEST_CASE("gradcheck: deterministic, exits 0") {
    RunResult a = run("gradcheck --seed 7");
    RunResult b = run("gradcheck --seed 7");
    CHECK(a.code == 0);
    CHECK(a.out == b.out);
    CHECK(a.out.find("max_rel_error") != std::string::npos);
}

TEST_CASE("synth is seed-reproducible and echoes its config") {
    fs::path d = workdir();
    CHECK(run("synth --out " + (d / "a").string() + " --scenes 3 --seed 11").code == 0);
    CHECK(run("synth --out " + (d / "b").string() + " --scenes 3 --seed 11").code == 0);
    for (const char* name : {"annotations.json", "scene_0000.a2bt", "scene_0002.a2bt"}) {
        std::ifstream fa(d / "a" / name, std::ios::binary), fb(d / "b" / name, std::ios::binary);
        std::string sa((std::istreambuf_iterator<char>(fa)), {});
        std::string sb((std::istreambuf_iterator<char>(fb)), {});
        CHECK(sa == sb);
        CHECK(!sa.empty());
    }
    json echo = read_json(d / "a" / "config.json");
    CHECK(echo.at("seed") == 11);
    CHECK(echo.at("synth").contains("noise_sigma"));  // defaults materialized
}

TEST_CASE("unknown config keys are rejected") {
    fs::path d = workdir();
    write_text(d / "bad.json", "{\"synth\": {\"nose_sigma\": 0.1}}");
    CHECK(run("synth --out " + (d / "o").string() + " --scenes 1 --seed 1 --config " +
              (d / "bad.json").string()).code == 1);
}

TEST_CASE("full pipeline: synth -> targets -> propose -> eval gives mAP 1.0") {
    fs::path d = workdir();
    // well-separated scenes: few instances, no forced crossings
    write_text(d / "cfg.json",
               R"({"synth": {"max_instances": 2, "cross_probability": 0.0}})");
    REQUIRE(run("synth --out " + (d / "ds").string() + " --scenes 5 --seed 2 --config " +
                (d / "cfg.json").string()).code == 0);

    json ann = read_json(d / "ds" / "annotations.json");
    json pred_set;
    pred_set["images"] = json::array();
    bool skipped_any = false;
    json kept_gt;
    kept_gt["images"] = json::array();
    for (const auto& img : ann.at("images")) {
        // skip scenes whose GT boxes overlap enough to contend in NMS
        a2bis::Scene scene = a2bis::scene_from_json(img);
        bool ok = true;
        for (size_t a = 0; a < scene.instances.size() && ok; ++a)
            for (size_t b = a + 1; b < scene.instances.size() && ok; ++b)
                if (a2bis::rotated_iou(scene.instances[a].rbox, scene.instances[b].rbox) > 0.25)
                    ok = false;
        if (!ok) { skipped_any = true; continue; }

        std::string id = img.at("id");
        write_text(d / (id + ".json"), img.dump());
        std::string prefix = (d / id).string();
        REQUIRE(run("targets --annotations " + (d / (id + ".json")).string() +
                    " --n-cls 2 --out-prefix " + prefix).code == 0);
        REQUIRE(run("propose --skl " + prefix + ".skl.a2bt --seg " + prefix +
                    ".seg.a2bt --box " + prefix + ".box.a2bt --out " + prefix +
                    ".dets.json").code == 0);
        json dets = read_json(d / (id + ".dets.json"));
        json entry;
        entry["id"] = id;
        entry["width"] = img.at("width");
        entry["detections"] = dets;
        pred_set["images"].push_back(entry);
        kept_gt["images"].push_back(img);
    }
    REQUIRE(pred_set["images"].size() >= 3);  // seed 2 keeps most scenes
    write_text(d / "pred.json", pred_set.dump());
    write_text(d / "gt.json", kept_gt.dump());
    REQUIRE(run("eval --pred " + (d / "pred.json").string() + " --gt " +
                (d / "gt.json").string() + " --out " + (d / "report.json").string())
                .code == 0);
    json report = read_json(d / "report.json");
    CHECK(report.at("map50").get<double>() == doctest::Approx(1.0));
    CHECK(report.at("bpq").get<double>() >= 0.95);
    // config echo written next to the report
    CHECK(fs::exists(d / "report.json.config.json"));
    (void)skipped_any;
}

TEST_CASE("propose --no-skeleton-score changes the echoed config") {
    fs::path d = workdir();
    REQUIRE(run("synth --out " + (d / "ds").string() + " --scenes 1 --seed 4").code == 0);
    json ann = read_json(d / "ds" / "annotations.json");
    write_text(d / "s.json", ann.at("images").at(0).dump());
    std::string prefix = (d / "s").string();
    REQUIRE(run("targets --annotations " + (d / "s.json").string() +
                " --n-cls 2 --out-prefix " + prefix).code == 0);
    REQUIRE(run("propose --skl " + prefix + ".skl.a2bt --seg " + prefix + ".seg.a2bt" +
                " --box " + prefix + ".box.a2bt --out " + prefix +
                ".dets.json --no-skeleton-score").code == 0);
    json echo = read_json(d / "s.dets.json.config.json");
    CHECK(echo.at("skeleton_score") == false);
}

TEST_CASE("train/infer round trip on a tiny config") {
    fs::path d = workdir();
    write_text(d / "cfg.json", R"({
      "synth": {"image_size": 16, "min_len": 6, "max_len": 9,
                 "min_wid": 2, "max_wid": 3},
      "net": {"stem_channels": 8, "block_channels": [8], "n_asa": [2],
               "stride2_blocks": [], "head_channels": 8, "n_cls": 2,
               "in_h": 16, "in_w": 16},
      "train": {"epochs": 1, "seed": 5}
    })");
    REQUIRE(run("synth --out " + (d / "lab").string() + " --scenes 4 --seed 6 --config " +
                (d / "cfg.json").string()).code == 0);
    REQUIRE(run("synth --out " + (d / "unlab").string() + " --scenes 2 --seed 7 --config " +
                (d / "cfg.json").string()).code == 0);
    REQUIRE(run("train --labeled " + (d / "lab").string() + " --unlabeled " +
                (d / "unlab").string() + " --config " + (d / "cfg.json").string() +
                " --out " + (d / "run").string()).code == 0);
    CHECK(fs::exists(d / "run" / "log.jsonl"));
    CHECK(fs::exists(d / "run" / "student" / "manifest.json"));
    CHECK(fs::exists(d / "run" / "teacher" / "manifest.json"));
    {
        std::ifstream log(d / "run" / "log.jsonl");
        std::string line;
        REQUIRE(std::getline(log, line));
        json e = json::parse(line);
        CHECK(e.at("epoch") == 0);
        CHECK(std::isfinite(e.at("total").get<double>()));
    }
    REQUIRE(run("infer --checkpoint " + (d / "run" / "student").string() + " --image " +
                (d / "lab" / "scene_0000.a2bt").string() + " --out-prefix " +
                (d / "out").string()).code == 0);
    a2bis::DenseMap skl = a2bis::read_tensor((d / "out.skl.a2bt").string());
    a2bis::DenseMap seg = a2bis::read_tensor((d / "out.seg.a2bt").string());
    CHECK(skl.h == 16);
    CHECK(skl.c == 1);
    CHECK(seg.c == 4);
    CHECK(skl.all_finite());
}

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: test_cli <path-to-cli-binary> [doctest args]\n");
        return 2;
    }
    g_cli = argv[1];
    doctest::Context ctx;
    ctx.applyCommandLine(argc - 1, argv + 1);
    return ctx.run();
}
