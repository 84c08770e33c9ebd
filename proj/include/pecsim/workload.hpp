#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace pecsim {

enum class RequestClass { Short, Long };

struct Request {
    std::int64_t id = 0;
    double arrival_time = 0.0;  // seconds
    std::int64_t input_len = 0;
    std::int64_t output_len = 0;
    RequestClass klass = RequestClass::Short;
};

struct TraceTransformConfig {
    double long_percentile = 0.95;
    std::int64_t long_min = 100'000;
    std::int64_t long_max = 500'000;
    std::uint64_t seed = 0;
};

// Empirical length model: input/output lengths are drawn uniformly from
// sample pools.
struct LengthModel {
    std::vector<std::int64_t> input_samples;
    std::vector<std::int64_t> output_samples;
};

// Long-tail pool shaped like production LLM traces: ~80% of inputs under 2K
// tokens, the rest trailing off toward ~9K; outputs in the tens-to-hundreds.
LengthModel make_longtail_length_model();

// Parses a delimited trace file (header: arrival_time_s,input_tokens,output_tokens).
// Throws TraceParseError with the offending line number on malformed input.
std::vector<Request> load_trace(const std::string& path);

// Relabels every request whose input length is strictly above the
// nearest-rank percentile value as Long and resamples its input length
// uniformly from [long_min, long_max]. Arrival times and output lengths are
// untouched.
std::vector<Request> transform_long_tail(const std::vector<Request>& requests,
                                         const TraceTransformConfig& cfg);

// Poisson arrivals at `rate` for `duration` seconds, lengths drawn from the
// model. Pure function of (arguments, seed).
std::vector<Request> synthesize_poisson(double rate, double duration,
                                        const LengthModel& model, std::uint64_t seed);

// Nearest-rank percentile threshold used by transform_long_tail (exposed for
// tests and capacity checks).
std::int64_t nearest_rank_value(std::vector<std::int64_t> values, double p);

struct TraceParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace pecsim
