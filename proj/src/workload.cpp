#include "pecsim/workload.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "pecsim/rng.hpp"

namespace pecsim {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) {
        out.push_back(field);
    }
    return out;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void parse_fail(std::size_t line_no, const std::string& what) {
    throw TraceParseError("trace parse error at line " + std::to_string(line_no) + ": " + what);
}

double parse_double(const std::string& raw, std::size_t line_no) {
    const std::string s = trim(raw);
    double v = 0.0;
    const auto* end = s.data() + s.size();
    const auto res = std::from_chars(s.data(), end, v);
    if (res.ec != std::errc{} || res.ptr != end || s.empty()) {
        parse_fail(line_no, "bad number '" + raw + "'");
    }
    return v;
}

std::int64_t parse_int(const std::string& raw, std::size_t line_no) {
    const std::string s = trim(raw);
    std::int64_t v = 0;
    const auto* end = s.data() + s.size();
    const auto res = std::from_chars(s.data(), end, v);
    if (res.ec != std::errc{} || res.ptr != end || s.empty()) {
        parse_fail(line_no, "bad integer '" + raw + "'");
    }
    return v;
}

}  // namespace

LengthModel make_longtail_length_model() {
    LengthModel m;
    Rng rng(substream_seed(0x5eed, "builtin-longtail-pool"));
    constexpr int kPool = 4096;
    m.input_samples.reserve(kPool);
    m.output_samples.reserve(kPool);
    for (int i = 0; i < kPool; ++i) {
        const double u = rng.next_unit();
        double len = 0.0;
        if (u < 0.80) {
            len = 16.0 * std::pow(2000.0 / 16.0, rng.next_unit());
        } else if (u < 0.95) {
            len = 2000.0 * std::pow(3.0, rng.next_unit());
        } else {
            len = 6000.0 + 3500.0 * rng.next_unit();
        }
        m.input_samples.push_back(static_cast<std::int64_t>(len));
        const double out = 4.0 * std::pow(300.0 / 4.0, rng.next_unit());
        m.output_samples.push_back(std::max<std::int64_t>(1, static_cast<std::int64_t>(out)));
    }
    return m;
}

std::vector<Request> load_trace(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw TraceParseError("cannot open trace file: " + path);
    }
    std::vector<Request> out;
    std::string line;
    std::size_t line_no = 0;
    bool saw_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string stripped = trim(line);
        if (stripped.empty()) continue;
        if (!saw_header) {
            if (stripped != "arrival_time_s,input_tokens,output_tokens") {
                parse_fail(line_no, "expected header arrival_time_s,input_tokens,output_tokens");
            }
            saw_header = true;
            continue;
        }
        const auto fields = split_csv(stripped);
        if (fields.size() != 3) {
            parse_fail(line_no, "expected 3 fields, got " + std::to_string(fields.size()));
        }
        Request r;
        r.id = static_cast<std::int64_t>(out.size());
        r.arrival_time = parse_double(fields[0], line_no);
        r.input_len = parse_int(fields[1], line_no);
        r.output_len = parse_int(fields[2], line_no);
        if (r.arrival_time < 0.0) parse_fail(line_no, "negative arrival time");
        if (r.input_len <= 0) parse_fail(line_no, "input_tokens must be > 0");
        if (r.output_len <= 0) parse_fail(line_no, "output_tokens must be > 0");
        out.push_back(r);
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const Request& a, const Request& b) { return a.arrival_time < b.arrival_time; });
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i].id = static_cast<std::int64_t>(i);
    }
    return out;
}

std::int64_t nearest_rank_value(std::vector<std::int64_t> values, double p) {
    if (values.empty()) {
        throw std::invalid_argument("nearest_rank_value: empty input");
    }
    std::sort(values.begin(), values.end());
    const auto n = static_cast<double>(values.size());
    auto rank = static_cast<std::size_t>(std::ceil(p * n));
    rank = std::min(std::max<std::size_t>(rank, 1), values.size());
    return values[rank - 1];
}

std::vector<Request> transform_long_tail(const std::vector<Request>& requests,
                                         const TraceTransformConfig& cfg) {
    if (requests.empty()) {
        throw std::invalid_argument("transform_long_tail: empty request list");
    }
    if (!(cfg.long_percentile > 0.0 && cfg.long_percentile < 1.0)) {
        throw std::invalid_argument("transform_long_tail: long_percentile must be in (0,1)");
    }
    if (cfg.long_min >= cfg.long_max) {
        throw std::invalid_argument("transform_long_tail: long_min must be < long_max");
    }
    std::vector<std::int64_t> lens;
    lens.reserve(requests.size());
    for (const auto& r : requests) lens.push_back(r.input_len);
    const std::int64_t threshold = nearest_rank_value(std::move(lens), cfg.long_percentile);

    Rng rng(substream_seed(cfg.seed, "trace-transform"));
    std::vector<Request> out = requests;
    for (auto& r : out) {
        if (r.input_len > threshold) {
            r.klass = RequestClass::Long;
            r.input_len = rng.uniform_int(cfg.long_min, cfg.long_max);
        } else {
            r.klass = RequestClass::Short;
        }
    }
    return out;
}

std::vector<Request> synthesize_poisson(double rate, double duration,
                                        const LengthModel& model, std::uint64_t seed) {
    if (rate <= 0.0) {
        throw std::invalid_argument("synthesize_poisson: rate must be > 0");
    }
    if (duration < 0.0) {
        throw std::invalid_argument("synthesize_poisson: duration must be >= 0");
    }
    if (model.input_samples.empty() || model.output_samples.empty()) {
        throw std::invalid_argument("synthesize_poisson: empty length model");
    }
    Rng arrivals(substream_seed(seed, "synthesis-arrivals"));
    Rng lengths(substream_seed(seed, "synthesis-lengths"));
    std::vector<Request> out;
    double t = 0.0;
    while (true) {
        t += arrivals.exponential(rate);
        if (t >= duration) break;
        Request r;
        r.id = static_cast<std::int64_t>(out.size());
        r.arrival_time = t;
        const auto ii = static_cast<std::size_t>(
            lengths.uniform_int(0, static_cast<std::int64_t>(model.input_samples.size()) - 1));
        const auto oi = static_cast<std::size_t>(
            lengths.uniform_int(0, static_cast<std::int64_t>(model.output_samples.size()) - 1));
        r.input_len = model.input_samples[ii];
        r.output_len = model.output_samples[oi];
        out.push_back(r);
    }
    return out;
}

}  // namespace pecsim
