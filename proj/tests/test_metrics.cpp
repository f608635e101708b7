#include "oodbench/detectors.hpp"
#include "oodbench/metrics.hpp"
#include "oodbench/rng.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace oodbench;

namespace {

struct Labeled {
    Vector conf;
    BoolVector is_id;
};

Labeled make(std::initializer_list<double> id, std::initializer_list<double> ood) {
    Labeled l;
    l.conf.resize(static_cast<Index>(id.size() + ood.size()));
    l.is_id.resize(l.conf.size());
    Index i = 0;
    for (double v : id) {
        l.conf[i] = v;
        l.is_id[i++] = true;
    }
    for (double v : ood) {
        l.conf[i] = v;
        l.is_id[i++] = false;
    }
    return l;
}

}  // namespace

TEST(SoftConfusion, PerfectDetector) {
    const auto l = make({1, 1}, {0});
    const auto c = soft_confusion(l.conf, l.is_id);
    EXPECT_EQ(c.tp, 2.0);
    EXPECT_EQ(c.fp, 0.0);
    EXPECT_EQ(c.fn, 0.0);
    EXPECT_EQ(c.tn, 1.0);
    const auto p = precision_f1(c);
    EXPECT_EQ(p.precision, 1.0);
    EXPECT_EQ(p.f1, 1.0);
}

TEST(SoftConfusion, ConfidenceSums) {
    const auto l = make({0.9, 0.7}, {0.2});
    const auto c = soft_confusion(l.conf, l.is_id);
    EXPECT_NEAR(c.tp, 1.6, 1e-12);
    EXPECT_NEAR(c.fp, 0.2, 1e-12);
    EXPECT_NEAR(c.fn, 0.4, 1e-12);
    EXPECT_NEAR(c.tn, 0.8, 1e-12);
    const auto p = precision_f1(c);
    EXPECT_NEAR(p.precision, 1.6 / 1.8, 1e-12);
    EXPECT_NEAR(p.recall, 0.8, 1e-12);
    EXPECT_NEAR(p.f1, 2 * (1.6 / 1.8) * 0.8 / (1.6 / 1.8 + 0.8), 1e-12);
}

TEST(SoftConfusion, UninformativeAndDegenerate) {
    const auto l = make({0.5, 0.5, 0.5}, {0.5, 0.5});
    EXPECT_NEAR(precision_f1(soft_confusion(l.conf, l.is_id)).precision, 3.0 / 5.0, 1e-12);
    const auto z = make({0, 0}, {0.3});
    const auto p = precision_f1(soft_confusion(z.conf, z.is_id));
    EXPECT_EQ(p.precision, 0.0);
    EXPECT_EQ(p.f1, 0.0);
    const auto bad = make({1.2}, {0});
    EXPECT_THROW(soft_confusion(bad.conf, bad.is_id), InvalidArgument);
}

TEST(RocAuc, RankingExtremes) {
    const auto l = make({0.9, 0.8}, {0.4});
    EXPECT_EQ(roc_auc(l.conf, l.is_id), 1.0);
    BoolVector flipped = l.is_id;
    for (Index i = 0; i < flipped.size(); ++i) flipped[i] = !flipped[i];
    EXPECT_EQ(roc_auc(l.conf, flipped), 0.0);
    const auto ties = make({0.5, 0.5}, {0.5, 0.5});
    EXPECT_EQ(roc_auc(ties.conf, ties.is_id), 0.5);
    const auto one = make({0.5}, {});
    EXPECT_THROW(roc_auc(one.conf, one.is_id), InvalidArgument);
}

TEST(RocAuc, EqualsPairwiseOracleExactly) {
    Rng rng(2024);
    for (int trial = 0; trial < 200; ++trial) {
        const Index n = 2 + static_cast<Index>(rng.below(99));
        Vector conf(n);
        BoolVector id(n);
        const bool coarse = trial % 2 == 0;
        for (Index i = 0; i < n; ++i) {
            conf[i] = coarse ? static_cast<double>(rng.below(5)) / 4.0 : rng.uniform();
            id[i] = rng.below(2) == 0;
        }
        id[0] = true;
        id[1] = false;
        EXPECT_EQ(roc_auc(conf, id), oracle::pairwise_auc(conf, id)) << "trial " << trial;
    }
}

TEST(Profile, NoOpClosuresAreFast) {
    const auto p = profile([] {}, [] {}, [] { return std::size_t{2048}; }, 3);
    EXPECT_GE(p.fit_time_s, 0.0);
    EXPECT_LT(p.fit_time_s, 0.01);
    EXPECT_GE(p.score_time_s, 0.0);
    EXPECT_LT(p.score_time_s, 0.01);
    EXPECT_DOUBLE_EQ(p.memory_kib, 2.0);
}

TEST(Profile, MahalanobisMemoryOrder) {
    const auto data = generate_toy(ToySpec::haystack_default(), 1, {200, 1, 2});
    const auto md = fit_mahalanobis(data.train.points);
    const double kib = static_cast<double>(serialize(md).size()) / 1024.0;
    EXPECT_GT(kib, 0.5);
    EXPECT_LT(kib, 6.0);
}

TEST(Report, CsvRoundTrip) {
    MetricsReport r{"md", "line", 0.123456789012345, 0.5, 0.99, 1.5e-3, 2e-6, 1.64};
    std::ostringstream out;
    write_report_csv(out, {r});
    const std::string text = out.str();
    EXPECT_EQ(text.substr(0, text.find('\n')), kReportHeader);
    const std::string row = text.substr(text.find('\n') + 1);
    EXPECT_EQ(std::count(row.begin(), row.end(), ','), 7);
    std::istringstream in(text);
    const auto back = read_report_csv(in);
    ASSERT_EQ(back.size(), 1u);
    EXPECT_EQ(back[0].detector, "md");
    EXPECT_EQ(back[0].toy, "line");
    EXPECT_NEAR(back[0].precision, r.precision, 1e-9);
    EXPECT_NEAR(back[0].fit_time_s, r.fit_time_s, 1e-9);
    EXPECT_NEAR(back[0].memory_kib, r.memory_kib, 1e-9);
    std::istringstream bad("detector,toy\nmd,line\n");
    EXPECT_THROW(read_report_csv(bad), InvalidArgument);
}

TEST(Report, LabelsWithCommasAndQuotesSurvive) {
    MetricsReport r{"fgsm(u(0,1))", "line", 0.5, 0.5, 0.5, 0.0, 0.0, 1.0};
    MetricsReport q{"say \"hi\"", "circle", 0.25, 0.25, 0.25, 0.0, 0.0, 2.0};
    std::ostringstream out;
    write_report_csv(out, {r, q});
    EXPECT_NE(out.str().find("\"fgsm(u(0,1))\",line,"), std::string::npos);
    std::istringstream in(out.str());
    const auto back = read_report_csv(in);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].detector, r.detector);
    EXPECT_EQ(back[1].detector, q.detector);
    EXPECT_EQ(back[1].memory_kib, 2.0);
    EXPECT_EQ(csv_split("a,\"b,c\",,d"), (std::vector<std::string>{"a", "b,c", "", "d"}));
    EXPECT_THROW(csv_split("a,\"b"), InvalidArgument);
}

TEST(Report, EvaluateConfidences) {
    const auto l = make({0.9, 0.7}, {0.2});
    const auto r = evaluate_confidences("x", "circle", l.conf, l.is_id);
    EXPECT_NEAR(r.precision, 1.6 / 1.8, 1e-12);
    EXPECT_EQ(r.roc_auc, 1.0);
    EXPECT_EQ(r.fit_time_s, 0.0);
}
