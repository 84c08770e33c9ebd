#pragma once

#include <map>
#include <optional>
#include <vector>

#include "pecsim/engine.hpp"

namespace pecsim {

inline constexpr int kReportPercentiles[] = {1, 25, 50, 75, 99};

struct MetricsReport {
    // Queueing delay percentiles (seconds), nearest-rank, keyed by rank.
    std::map<int, double> q_delay_short;
    std::map<int, double> q_delay_long;
    // Same divided by the experiment's declared baseline (FIFO p99); absent
    // when the bundle has no FIFO run.
    std::map<int, double> q_delay_short_normalized;
    std::map<int, double> q_delay_long_normalized;
    double normalization_divisor_short = 0.0;
    double normalization_divisor_long = 0.0;

    double throughput_rps_short = 0.0;
    double throughput_rps_long = 0.0;
    double avg_jct_long = 0.0;
    double gpu_idle_rate = 0.0;
    double starvation_rate_long = 0.0;
    std::int64_t total_preemptions = 0;
    double sched_overhead_ratio_p99 = 0.0;
    double sched_overhead_ratio_p99_short = 0.0;
    double sched_overhead_ratio_p99_long = 0.0;

    std::int64_t arrived_short = 0;
    std::int64_t arrived_long = 0;
    std::int64_t completed_short = 0;
    std::int64_t completed_long = 0;
    std::int64_t starved_long = 0;
    std::int64_t starved_short = 0;
    double end_time = 0.0;
};

// Eq-style idle rate: sum of idle over sum of (exec + idle).
double gpu_idle_rate(const std::vector<GpuAccounting>& gpus);

// Nearest-rank percentile: the ceil(p*N)-th smallest value; empty input gives
// no value.
std::optional<double> percentile(std::vector<double> values, double p);

// Time to first service; suspensions after start are not queueing delay.
double queueing_delay(const RequestRecord& rec);

double throughput_rps(const std::vector<RequestRecord>& records, RequestClass klass);

// Per-request ratio of modeled scheduling time to JCT, reported at p99.
std::optional<double> sched_overhead_ratio_p99(const std::vector<RequestRecord>& records,
                                               std::optional<RequestClass> klass);

MetricsReport build_report(const SimResult& result);

}  // namespace pecsim
