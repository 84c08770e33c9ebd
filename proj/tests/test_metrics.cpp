#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "pecsim/metrics.hpp"

using namespace pecsim;

namespace {

RequestRecord done_record(std::int64_t id, RequestClass klass, double arrival, double start,
                          double finish) {
    RequestRecord r;
    r.id = id;
    r.klass = klass;
    r.arrival_time = arrival;
    r.prefill_start = start;
    r.first_token = start;
    r.finish = finish;
    r.phase = Phase::Done;
    return r;
}

}  // namespace

TEST_CASE("gpu idle rate follows the exec/idle sums") {
    CHECK(gpu_idle_rate({{0, 3.0, 0.0}, {1, 5.0, 0.0}}) == doctest::Approx(0.0));
    CHECK(gpu_idle_rate({{0, 3.0, 1.0}, {1, 4.0, 0.0}}) == doctest::Approx(0.125));
    CHECK(gpu_idle_rate({{0, 0.0, 2.0}, {1, 0.0, 6.0}}) == doctest::Approx(1.0));
}

TEST_CASE("nearest-rank percentile") {
    CHECK(*percentile({1, 2, 3, 4}, 0.50) == doctest::Approx(2.0));
    CHECK(*percentile({7}, 0.01) == doctest::Approx(7.0));
    CHECK(*percentile({7}, 0.99) == doctest::Approx(7.0));
    std::vector<double> v;
    for (int i = 1; i <= 100; ++i) v.push_back(i);
    CHECK(*percentile(v, 0.99) == doctest::Approx(99.0));
    CHECK(!percentile({}, 0.5).has_value());

    // Non-decreasing in rank.
    std::vector<double> sample = {9, 1, 4, 4, 2, 8, 100, 3};
    double prev = 0.0;
    for (const int p : kReportPercentiles) {
        const double v99 = *percentile(sample, p / 100.0);
        CHECK(v99 >= prev);
        prev = v99;
    }
}

TEST_CASE("queueing delay is time to first service") {
    CHECK(queueing_delay(done_record(0, RequestClass::Short, 2.0, 5.0, 9.0)) ==
          doctest::Approx(3.0));
    CHECK(queueing_delay(done_record(0, RequestClass::Short, 2.0, 2.0, 9.0)) ==
          doctest::Approx(0.0));
}

TEST_CASE("throughput counts completions over the active window") {
    std::vector<RequestRecord> records;
    for (int i = 0; i < 100; ++i) {
        records.push_back(done_record(i, RequestClass::Short, 0.0, 1.0, 50.0));
    }
    CHECK(throughput_rps(records, RequestClass::Short) == doctest::Approx(2.0));
    CHECK(throughput_rps(records, RequestClass::Long) == doctest::Approx(0.0));
}

TEST_CASE("report splits starved requests out of the delay percentiles") {
    SimResult result;
    result.end_time = 100.0;
    result.records.push_back(done_record(0, RequestClass::Long, 0.0, 10.0, 60.0));
    RequestRecord starved;
    starved.id = 1;
    starved.klass = RequestClass::Long;
    starved.arrival_time = 5.0;
    starved.phase = Phase::Starved;
    result.records.push_back(starved);
    result.records.push_back(done_record(2, RequestClass::Short, 0.0, 0.0, 2.0));
    result.gpus = {{0, 80.0, 20.0}};
    const auto report = build_report(result);
    CHECK(report.arrived_long == 2);
    CHECK(report.completed_long == 1);
    CHECK(report.starved_long == 1);
    CHECK(report.starvation_rate_long == doctest::Approx(0.5));
    CHECK(report.q_delay_long.at(99) == doctest::Approx(10.0));
    CHECK(report.avg_jct_long == doctest::Approx(60.0));
    CHECK(report.gpu_idle_rate == doctest::Approx(0.2));
    // starvation + completion fractions partition arrived longs
    CHECK(report.starvation_rate_long +
              static_cast<double>(report.completed_long) /
                  static_cast<double>(report.arrived_long) ==
          doctest::Approx(1.0));
}

TEST_CASE("report recomputation is idempotent") {
    SimResult result;
    result.end_time = 10.0;
    for (int i = 0; i < 20; ++i) {
        result.records.push_back(
            done_record(i, RequestClass::Short, i * 0.1, i * 0.1 + 0.05, i * 0.1 + 1.0));
    }
    result.gpus = {{0, 9.0, 1.0}};
    const auto a = build_report(result);
    const auto b = build_report(result);
    CHECK(a.q_delay_short == b.q_delay_short);
    CHECK(a.throughput_rps_short == b.throughput_rps_short);
    CHECK(a.gpu_idle_rate == b.gpu_idle_rate);
}

TEST_CASE("sched overhead ratio at p99") {
    std::vector<RequestRecord> records;
    for (int i = 0; i < 10; ++i) {
        auto r = done_record(i, RequestClass::Short, 0.0, 0.0, 1.0);
        r.sched_overhead = 0.0;
        records.push_back(r);
    }
    CHECK(*sched_overhead_ratio_p99(records, RequestClass::Short) == doctest::Approx(0.0));
    records[9].sched_overhead = 0.001;  // 1 ms on a 1 s JCT
    CHECK(*sched_overhead_ratio_p99(records, RequestClass::Short) == doctest::Approx(0.001));
    CHECK(!sched_overhead_ratio_p99(records, RequestClass::Long).has_value());
}
