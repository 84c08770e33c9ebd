#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>

#include "pecsim/rng.hpp"
#include "pecsim/workload.hpp"

using namespace pecsim;

namespace {

struct TempTrace {
    std::string path;
    explicit TempTrace(const std::string& body) {
        path = std::string("workload_test_trace.csv");
        std::ofstream out(path);
        out << body;
    }
    ~TempTrace() { std::remove(path.c_str()); }
};

bool same_stream(const std::vector<Request>& a, const std::vector<Request>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].id != b[i].id || a[i].arrival_time != b[i].arrival_time ||
            a[i].input_len != b[i].input_len || a[i].output_len != b[i].output_len ||
            a[i].klass != b[i].klass) {
            return false;
        }
    }
    return true;
}

}  // namespace

TEST_CASE("load_trace ingests rows in arrival order") {
    TempTrace t(
        "arrival_time_s,input_tokens,output_tokens\n"
        "0,100,10\n"
        "1,2000,50\n"
        "2,9000,100\n");
    const auto reqs = load_trace(t.path);
    REQUIRE(reqs.size() == 3);
    CHECK(reqs[0].input_len == 100);
    CHECK(reqs[1].input_len == 2000);
    CHECK(reqs[2].input_len == 9000);
    CHECK(reqs[2].arrival_time == doctest::Approx(2.0));
    for (const auto& r : reqs) CHECK(r.klass == RequestClass::Short);
}

TEST_CASE("load_trace sorts by arrival time") {
    TempTrace t(
        "arrival_time_s,input_tokens,output_tokens\n"
        "5,10,1\n"
        "1,20,2\n");
    const auto reqs = load_trace(t.path);
    REQUIRE(reqs.size() == 2);
    CHECK(reqs[0].input_len == 20);
    CHECK(reqs[0].id == 0);
}

TEST_CASE("load_trace empty file yields empty stream") {
    TempTrace t("");
    CHECK(load_trace(t.path).empty());
}

TEST_CASE("load_trace rejects non-positive lengths with line number") {
    TempTrace t(
        "arrival_time_s,input_tokens,output_tokens\n"
        "0,0,10\n");
    CHECK_THROWS_WITH_AS(load_trace(t.path),
                         doctest::Contains("line 2"), TraceParseError);
}

TEST_CASE("load_trace rejects malformed rows") {
    TempTrace t(
        "arrival_time_s,input_tokens,output_tokens\n"
        "0,abc,10\n");
    CHECK_THROWS_AS(load_trace(t.path), TraceParseError);
}

TEST_CASE("transform marks exactly the above-percentile requests") {
    std::vector<Request> reqs;
    for (int i = 1; i <= 100; ++i) {
        Request r;
        r.id = i - 1;
        r.arrival_time = static_cast<double>(i);
        r.input_len = i;
        r.output_len = 7;
        reqs.push_back(r);
    }
    TraceTransformConfig cfg;
    cfg.seed = 42;
    const auto out = transform_long_tail(reqs, cfg);

    // Brute-force nearest-rank oracle: ceil(0.95*100) = 95th smallest = 95,
    // so original lengths 96..100 exceed it.
    int longs = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (out[i].klass == RequestClass::Long) {
            ++longs;
            CHECK(reqs[i].input_len > 95);
            CHECK(out[i].input_len >= cfg.long_min);
            CHECK(out[i].input_len <= cfg.long_max);
        } else {
            CHECK(out[i].input_len == reqs[i].input_len);
        }
        CHECK(out[i].arrival_time == reqs[i].arrival_time);
        CHECK(out[i].output_len == reqs[i].output_len);
    }
    CHECK(longs == 5);
}

TEST_CASE("transform leaves a degenerate distribution all short") {
    std::vector<Request> reqs(50);
    for (std::size_t i = 0; i < reqs.size(); ++i) {
        reqs[i].id = static_cast<std::int64_t>(i);
        reqs[i].arrival_time = static_cast<double>(i);
        reqs[i].input_len = 500;
        reqs[i].output_len = 5;
    }
    const auto out = transform_long_tail(reqs, TraceTransformConfig{});
    for (const auto& r : out) CHECK(r.klass == RequestClass::Short);
}

TEST_CASE("transform is deterministic under seed") {
    std::vector<Request> reqs;
    for (int i = 1; i <= 200; ++i) {
        Request r;
        r.id = i;
        r.arrival_time = i;
        r.input_len = i * 3;
        r.output_len = 11;
        reqs.push_back(r);
    }
    TraceTransformConfig cfg;
    cfg.seed = 7;
    CHECK(same_stream(transform_long_tail(reqs, cfg), transform_long_tail(reqs, cfg)));
}

TEST_CASE("poisson synthesis count tracks rate*duration") {
    const auto model = make_longtail_length_model();
    const auto reqs = synthesize_poisson(10.0, 1000.0, model, 99);
    CHECK(reqs.size() > 9500);
    CHECK(reqs.size() < 10500);
    for (std::size_t i = 1; i < reqs.size(); ++i) {
        CHECK(reqs[i].arrival_time >= reqs[i - 1].arrival_time);
    }
}

TEST_CASE("poisson synthesis is deterministic and duration 0 is empty") {
    const auto model = make_longtail_length_model();
    CHECK(synthesize_poisson(5.0, 0.0, model, 1).empty());
    CHECK(same_stream(synthesize_poisson(5.0, 100.0, model, 3),
                      synthesize_poisson(5.0, 100.0, model, 3)));
    CHECK_THROWS_AS(synthesize_poisson(0.0, 10.0, model, 1), std::invalid_argument);
}

TEST_CASE("long fraction equals strictly-above-threshold fraction") {
    std::vector<Request> reqs;
    Rng rng(17);
    for (int i = 0; i < 500; ++i) {
        Request r;
        r.id = i;
        r.arrival_time = i * 0.5;
        r.input_len = rng.uniform_int(1, 4000);
        r.output_len = 9;
        reqs.push_back(r);
    }
    TraceTransformConfig cfg;
    cfg.seed = 5;
    const auto out = transform_long_tail(reqs, cfg);

    std::vector<std::int64_t> lens;
    for (const auto& r : reqs) lens.push_back(r.input_len);
    const auto threshold = nearest_rank_value(lens, cfg.long_percentile);
    std::size_t expected = 0;
    for (const auto& r : reqs) {
        if (r.input_len > threshold) ++expected;
    }
    std::size_t actual = 0;
    for (const auto& r : out) {
        if (r.klass == RequestClass::Long) ++actual;
    }
    CHECK(actual == expected);
}

TEST_CASE("builtin length model is long-tailed") {
    const auto model = make_longtail_length_model();
    std::size_t under_2k = 0;
    for (const auto len : model.input_samples) {
        CHECK(len >= 16);
        CHECK(len <= 9500);
        if (len < 2000) ++under_2k;
    }
    const double frac = static_cast<double>(under_2k) /
                        static_cast<double>(model.input_samples.size());
    CHECK(frac > 0.75);
    CHECK(frac < 0.85);
    for (const auto len : model.output_samples) {
        CHECK(len >= 1);
        CHECK(len <= 800);
    }
}
