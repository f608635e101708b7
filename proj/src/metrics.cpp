#include "oodbench/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace oodbench {

SoftConfusion soft_confusion(const Vector& confidences, const BoolVector& is_id) {
    require(confidences.size() == is_id.size(), "confusion: size mismatch");
    require(confidences.size() > 0, "confusion: empty input");
    SoftConfusion c;
    for (Index i = 0; i < confidences.size(); ++i) {
        const double p = confidences[i];
        require(p >= 0.0 && p <= 1.0, "confusion: confidences must lie in [0, 1]");
        if (is_id[i]) {
            c.tp += p;
            c.fn += 1.0 - p;
        } else {
            c.fp += p;
            c.tn += 1.0 - p;
        }
    }
    return c;
}

PrecisionF1 precision_f1(const SoftConfusion& c) noexcept {
    PrecisionF1 out;
    out.precision = c.tp + c.fp > 0.0 ? c.tp / (c.tp + c.fp) : 0.0;
    out.recall = c.tp + c.fn > 0.0 ? c.tp / (c.tp + c.fn) : 0.0;
    const double sum = out.precision + out.recall;
    out.f1 = sum > 0.0 ? 2.0 * out.precision * out.recall / sum : 0.0;
    return out;
}

double roc_auc(const Vector& confidences, const BoolVector& is_id) {
    require(confidences.size() == is_id.size(), "roc: size mismatch");
    const Index n = confidences.size();
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::sort(order.begin(), order.end(), [&](Index a, Index b) { return confidences[a] < confidences[b]; });

    // Walk tie groups in ascending order; each ID point earns 2 per OOD point
    // strictly below it and 1 per OOD point tied with it.
    std::uint64_t twice_u = 0;
    std::uint64_t ood_below = 0;
    std::uint64_t n_id = 0;
    std::uint64_t n_ood = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        std::uint64_t group_id = 0;
        std::uint64_t group_ood = 0;
        while (j < order.size() && confidences[order[j]] == confidences[order[i]]) {
            (is_id[order[j]] ? group_id : group_ood) += 1;
            ++j;
        }
        twice_u += group_id * (2 * ood_below + group_ood);
        ood_below += group_ood;
        n_id += group_id;
        n_ood += group_ood;
        i = j;
    }
    require(n_id > 0 && n_ood > 0, "roc: need at least one ID and one OOD point");
    return static_cast<double>(twice_u) / (2.0 * static_cast<double>(n_id) * static_cast<double>(n_ood));
}

namespace {

double median_seconds(const std::function<void()>& fn, int repeats) {
    std::vector<double> times;
    for (int r = 0; r < repeats; ++r) {
        const auto start = std::chrono::steady_clock::now();
        fn();
        const auto stop = std::chrono::steady_clock::now();
        times.push_back(std::chrono::duration<double>(stop - start).count());
    }
    std::sort(times.begin(), times.end());
    const std::size_t m = times.size() / 2;
    return times.size() % 2 == 1 ? times[m] : 0.5 * (times[m - 1] + times[m]);
}

}  // namespace

ProfileResult profile(const std::function<void()>& fit, const std::function<void()>& score,
                      const std::function<std::size_t()>& serialized_bytes, int repeats) {
    require(repeats >= 1, "profile: repeats must be positive");
    ProfileResult out;
    out.fit_time_s = median_seconds(fit, repeats);
    out.score_time_s = median_seconds(score, repeats);
    out.memory_kib = static_cast<double>(serialized_bytes()) / 1024.0;
    return out;
}

MetricsReport evaluate_confidences(std::string detector, std::string toy, const Vector& confidences,
                                   const BoolVector& is_id) {
    const PrecisionF1 pf = precision_f1(soft_confusion(confidences, is_id));
    MetricsReport r;
    r.detector = std::move(detector);
    r.toy = std::move(toy);
    r.precision = pf.precision;
    r.f1 = pf.f1;
    r.roc_auc = roc_auc(confidences, is_id);
    return r;
}

std::string csv_quote(const std::string& field) {
    if (field.find_first_of(",\"\r\n") == std::string::npos) {
        return field;
    }
    std::string q = "\"";
    for (char c : field) {
        if (c == '"') q += '"';
        q += c;
    }
    q += '"';
    return q;
}

std::vector<std::string> csv_split(const std::string& line) {
    std::vector<std::string> fields(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c != '"') {
                fields.back() += c;
            } else if (i + 1 < line.size() && line[i + 1] == '"') {
                fields.back() += '"';
                ++i;
            } else {
                quoted = false;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.emplace_back();
        } else {
            fields.back() += c;
        }
    }
    if (quoted) {
        throw InvalidArgument("csv: unterminated quote in '" + line + "'");
    }
    return fields;
}

void write_report_csv(std::ostream& out, const std::vector<MetricsReport>& reports) {
    out << kReportHeader << '\n';
    const auto old = out.precision(17);
    for (const auto& r : reports) {
        out << csv_quote(r.detector) << ',' << csv_quote(r.toy) << ',' << r.precision << ',' << r.f1 << ',' << r.roc_auc << ','
            << r.fit_time_s << ',' << r.score_time_s << ',' << r.memory_kib << '\n';
    }
    out.precision(old);
}

std::vector<MetricsReport> read_report_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != kReportHeader) {
        throw InvalidArgument("report csv: unexpected header");
    }
    std::vector<MetricsReport> out;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const std::vector<std::string> fields = csv_split(line);
        if (fields.size() != 8) {
            throw InvalidArgument("report csv: expected 8 columns in '" + line + "'");
        }
        MetricsReport r;
        r.detector = fields[0];
        r.toy = fields[1];
        try {
            r.precision = std::stod(fields[2]);
            r.f1 = std::stod(fields[3]);
            r.roc_auc = std::stod(fields[4]);
            r.fit_time_s = std::stod(fields[5]);
            r.score_time_s = std::stod(fields[6]);
            r.memory_kib = std::stod(fields[7]);
        } catch (const std::exception&) {
            throw InvalidArgument("report csv: bad number in '" + line + "'");
        }
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace oodbench
