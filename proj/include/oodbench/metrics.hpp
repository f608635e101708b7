#pragma once

#include "oodbench/core.hpp"

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace oodbench {

/// Confusion counts where each test point contributes its confidence to the
/// positive (ID) column and the complement to the negative one.
struct SoftConfusion {
    double tp = 0.0;
    double fp = 0.0;
    double fn = 0.0;
    double tn = 0.0;
};

SoftConfusion soft_confusion(const Vector& confidences, const BoolVector& is_id);

struct PrecisionF1 {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

PrecisionF1 precision_f1(const SoftConfusion& c) noexcept;

/// P(conf_ID > conf_OOD) + 0.5 P(conf_ID = conf_OOD) over all ID x OOD
/// pairs, by sorting. The pair count is accumulated in integers, so the
/// result is the exact Mann-Whitney fraction rounded once.
double roc_auc(const Vector& confidences, const BoolVector& is_id);

struct ProfileResult {
    double fit_time_s = 0.0;
    double score_time_s = 0.0;
    double memory_kib = 0.0;
};

/// Median wall-clock time over `repeats` runs of each closure, and the model
/// size in KiB as reported by `serialized_bytes` after the last fit.
ProfileResult profile(const std::function<void()>& fit, const std::function<void()>& score,
                      const std::function<std::size_t()>& serialized_bytes, int repeats = 3);

struct MetricsReport {
    std::string detector;
    std::string toy;
    double precision = 0.0;
    double f1 = 0.0;
    double roc_auc = 0.0;
    double fit_time_s = 0.0;
    double score_time_s = 0.0;
    double memory_kib = 0.0;
};

MetricsReport evaluate_confidences(std::string detector, std::string toy, const Vector& confidences,
                                   const BoolVector& is_id);

inline constexpr const char* kReportHeader =
    "detector,toy,precision,f1,roc_auc,fit_time_s,score_time_s,memory_kib";

/// Quotes a CSV field when it contains a comma, quote or line break.
std::string csv_quote(const std::string& field);
/// Splits one CSV record, honouring double-quoted fields.
std::vector<std::string> csv_split(const std::string& line);

void write_report_csv(std::ostream& out, const std::vector<MetricsReport>& reports);
std::vector<MetricsReport> read_report_csv(std::istream& in);

}  // namespace oodbench
