#include "pecsim/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace pecsim {

double gpu_idle_rate(const std::vector<GpuAccounting>& gpus) {
    double idle = 0.0;
    double total = 0.0;
    for (const auto& g : gpus) {
        idle += g.idle_time;
        total += g.exec_time + g.idle_time;
    }
    return total > 0.0 ? idle / total : 0.0;
}

std::optional<double> percentile(std::vector<double> values, double p) {
    if (values.empty()) return std::nullopt;
    std::sort(values.begin(), values.end());
    auto rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(values.size())));
    rank = std::min(std::max<std::size_t>(rank, 1), values.size());
    return values[rank - 1];
}

double queueing_delay(const RequestRecord& rec) {
    return rec.prefill_start - rec.arrival_time;
}

double throughput_rps(const std::vector<RequestRecord>& records, RequestClass klass) {
    std::int64_t completed = 0;
    double first_arrival = 0.0;
    double last_completion = 0.0;
    bool any_arrival = false;
    for (const auto& rec : records) {
        if (rec.klass != klass) continue;
        if (!any_arrival) {
            first_arrival = rec.arrival_time;
            any_arrival = true;
        } else {
            first_arrival = std::min(first_arrival, rec.arrival_time);
        }
        if (rec.phase == Phase::Done) {
            ++completed;
            last_completion = std::max(last_completion, rec.finish);
        }
    }
    if (completed == 0) return 0.0;
    const double window = last_completion - first_arrival;
    return window > 0.0 ? static_cast<double>(completed) / window : 0.0;
}

std::optional<double> sched_overhead_ratio_p99(const std::vector<RequestRecord>& records,
                                               std::optional<RequestClass> klass) {
    std::vector<double> ratios;
    for (const auto& rec : records) {
        if (rec.phase != Phase::Done) continue;
        if (klass.has_value() && rec.klass != *klass) continue;
        const double jct = rec.finish - rec.arrival_time;
        ratios.push_back(jct > 0.0 ? rec.sched_overhead / jct : 0.0);
    }
    return percentile(std::move(ratios), 0.99);
}

MetricsReport build_report(const SimResult& result) {
    MetricsReport report;
    report.end_time = result.end_time;
    report.total_preemptions = result.total_preemptions;
    report.gpu_idle_rate = gpu_idle_rate(result.gpus);

    std::vector<double> delays_short;
    std::vector<double> delays_long;
    std::vector<double> jct_long;
    for (const auto& rec : result.records) {
        const bool is_long = rec.klass == RequestClass::Long;
        (is_long ? report.arrived_long : report.arrived_short) += 1;
        if (rec.phase == Phase::Starved) {
            (is_long ? report.starved_long : report.starved_short) += 1;
            continue;
        }
        if (rec.phase != Phase::Done) continue;
        (is_long ? report.completed_long : report.completed_short) += 1;
        (is_long ? delays_long : delays_short).push_back(queueing_delay(rec));
        if (is_long) {
            jct_long.push_back(rec.finish - rec.arrival_time);
        }
    }
    for (const int p : kReportPercentiles) {
        if (const auto v = percentile(delays_short, p / 100.0)) {
            report.q_delay_short[p] = *v;
        }
        if (const auto v = percentile(delays_long, p / 100.0)) {
            report.q_delay_long[p] = *v;
        }
    }
    report.throughput_rps_short = throughput_rps(result.records, RequestClass::Short);
    report.throughput_rps_long = throughput_rps(result.records, RequestClass::Long);
    if (!jct_long.empty()) {
        double sum = 0.0;
        for (const double v : jct_long) sum += v;
        report.avg_jct_long = sum / static_cast<double>(jct_long.size());
    }
    report.starvation_rate_long =
        report.arrived_long > 0
            ? static_cast<double>(report.starved_long) / static_cast<double>(report.arrived_long)
            : 0.0;
    report.sched_overhead_ratio_p99 =
        sched_overhead_ratio_p99(result.records, std::nullopt).value_or(0.0);
    report.sched_overhead_ratio_p99_short =
        sched_overhead_ratio_p99(result.records, RequestClass::Short).value_or(0.0);
    report.sched_overhead_ratio_p99_long =
        sched_overhead_ratio_p99(result.records, RequestClass::Long).value_or(0.0);
    return report;
}

}  // namespace pecsim
