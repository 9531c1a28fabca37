#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "hlm/bench.hpp"

using namespace hlm;

namespace {

BenchOptions small_grid() {
    BenchOptions opt;
    opt.vocab_grid = {256, 2048, 8192};
    opt.K = 64;
    opt.D = 32;
    opt.reps = 30;
    opt.warmup = 3;
    return opt;
}

}  // namespace

TEST_CASE("benchmark scaling trends on a small grid", "[bench]") {
    auto report = bench_loss_scaling(small_grid());
    REQUIRE(report.points.size() == 6);

    // CE cost grows with V; CWT cost does not depend on V at all
    const auto& ce_a = report.at("vanilla_ce", 256);
    const auto& ce_b = report.at("vanilla_ce", 2048);
    const auto& ce_c = report.at("vanilla_ce", 8192);
    CHECK(ce_a.median_s < ce_b.median_s);
    CHECK(ce_b.median_s < ce_c.median_s);
    for (const auto& p : report.points) {
        CHECK(!p.skipped);
        CHECK(p.median_s > 0);
        CHECK(p.iqr_s >= 0);
        CHECK(p.peak_bytes > 0);
    }

    // CWT is the cheaper loss whenever K < V
    for (int V : {256, 2048, 8192})
        CHECK(report.at("headless_cwt", V).median_s < report.at("vanilla_ce", V).median_s);
}

TEST_CASE("cwt loss allocations are independent of V, CE's scale with it", "[bench]") {
    auto report = bench_loss_scaling(small_grid());
    const auto cwt_peak = report.at("headless_cwt", 256).peak_bytes;
    for (int V : {2048, 8192})
        CHECK(report.at("headless_cwt", V).peak_bytes == cwt_peak);
    // and the K x V logit buffer alone dwarfs the whole CWT footprint
    CHECK(cwt_peak < 64LL * 2048 * static_cast<long long>(sizeof(float)));
    CHECK(report.at("vanilla_ce", 8192).peak_bytes >
          3 * report.at("vanilla_ce", 2048).peak_bytes);
}

TEST_CASE("cwt peak allocation scales as K squared", "[bench]") {
    auto opt = small_grid();
    opt.vocab_grid = {1024};
    opt.D = 8;  // keep the K x D terms negligible next to K x K
    opt.K = 128;
    const auto p1 = bench_loss_scaling(opt).at("headless_cwt", 1024).peak_bytes;
    opt.K = 256;
    const auto p2 = bench_loss_scaling(opt).at("headless_cwt", 1024).peak_bytes;
    const double ratio = static_cast<double>(p2) / static_cast<double>(p1);
    CHECK(ratio > 4.0 * 0.9);
    CHECK(ratio < 4.0 * 1.1);
}

TEST_CASE("points over the memory budget are skipped with a marker", "[bench]") {
    auto opt = small_grid();
    opt.reps = 20;
    opt.memory_budget_bytes = 500000;  // fits CE at V=256 but not V=2048
    auto report = bench_loss_scaling(opt);
    CHECK(!report.at("vanilla_ce", 256).skipped);
    CHECK(report.at("vanilla_ce", 2048).skipped);
    CHECK(report.at("vanilla_ce", 8192).skipped);
    CHECK(report.at("vanilla_ce", 8192).median_s == 0);
    CHECK(!report.at("headless_cwt", 8192).skipped);
}

TEST_CASE("benchmark preconditions", "[bench]") {
    auto opt = small_grid();
    opt.reps = 19;
    CHECK_THROWS_AS(bench_loss_scaling(opt), ContractError);
    opt = small_grid();
    opt.vocab_grid = {};
    CHECK_THROWS_AS(bench_loss_scaling(opt), ConfigError);
}

TEST_CASE("benchmark report emission formats", "[bench]") {
    BenchReport report;
    BenchPoint p;
    p.objective = "vanilla_ce";
    p.V = 1000;
    p.K = 256;
    p.D = 128;
    p.N = 16;
    p.median_s = 0.25;
    p.iqr_s = 0.5;
    p.peak_bytes = 42;
    report.points.push_back(p);
    p.objective = "headless_cwt";
    p.skipped = true;
    report.points.push_back(p);

    const std::string csv = bench_to_csv(report);
    CHECK(csv == "objective,V,K,D,N,median_s,iqr_s,peak_bytes,skipped\n"
                 "vanilla_ce,1000,256,128,16,0.25,0.5,42,0\n"
                 "headless_cwt,1000,256,128,16,0.25,0.5,42,1\n");
    const std::string jsonl = bench_to_jsonl(report);
    CHECK(jsonl.find("\"objective\":\"vanilla_ce\"") != std::string::npos);
    CHECK(jsonl.find("\"skipped\":true") != std::string::npos);
    CHECK(std::count(jsonl.begin(), jsonl.end(), '\n') == 2);
}
