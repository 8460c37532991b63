// Pipeline orchestration: certificate status evaluation, boundary shrink
// schedule, Monte Carlo section, JSON/text serialization, determinism.

#include <mdtree/report.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <string>

namespace mdtree {
namespace {

constexpr double kLn2 = 0.6931471805599453;

SymMatrix s1(double v) {
  Eigen::MatrixXd a(1, 1);
  a << v;
  return SymMatrix(a);
}

ProblemInstance scalar(double sx, double d0, double d1, double d2) {
  ProblemInstance inst;
  inst.m = 1;
  inst.L = 2;
  inst.sigma_x = s1(sx);
  inst.distortions = {s1(d0), s1(d1), s1(d2)};
  return inst;
}

ProblemInstance scalar_interior() { return scalar(1.0, 0.3, 0.5, 0.5); }
ProblemInstance scalar_central_only() { return scalar(1.0, 0.25, 1.0, 1.0); }

ProblemInstance pair_mixed() {
  ProblemInstance inst;
  inst.m = 2;
  inst.L = 2;
  Eigen::MatrixXd sx(2, 2), d0(2, 2), d1(2, 2), d2(2, 2);
  sx << 2.0, 0.5, 0.5, 1.0;
  d0 << 0.5, 0.1, 0.1, 0.4;
  d1 << 1.2, 0.2, 0.2, 0.7;
  d2 << 1.0, 0.3, 0.3, 0.6;
  inst.sigma_x = SymMatrix(sx);
  inst.distortions = {SymMatrix(d0), SymMatrix(d1), SymMatrix(d2)};
  return inst;
}

TEST(ReportTest, InteriorScalarInstanceIsVerified) {
  const RateReport rep = run_report(scalar_interior());
  EXPECT_EQ(rep.status, CertificateStatus::verified);
  EXPECT_TRUE(rep.unverified_reasons.empty());
  EXPECT_TRUE(rep.failures.empty());
  // Value certified independently by the exhaustive grid in the oracle suite.
  EXPECT_NEAR(rep.value_nats, 0.703456824161, 1e-8);
  EXPECT_DOUBLE_EQ(rep.value_bits, rep.value_nats / std::log(2.0));
  EXPECT_EQ(rep.solved_value_nats, rep.value_nats);
  EXPECT_FALSE(rep.boundary);
  EXPECT_TRUE(rep.epsilon_schedule.empty());
  EXPECT_LE(rep.rate_gap, 1e-6 * (1.0 + rep.value_nats));
  EXPECT_TRUE(rep.distortions.all_satisfied);
  EXPECT_EQ(rep.distortions.entries.size(), 3u);
  ASSERT_EQ(rep.lambda_min_eigs.size(), 1u);
  EXPECT_GE(rep.lambda_min_eigs[0].second, -1e-8);
  EXPECT_FALSE(rep.mc.has_value());
  EXPECT_GE(rep.wall.total_s, rep.wall.solve_s);
}

TEST(ReportTest, BoundaryInstanceRunsTheShrinkSchedule) {
  const RateReport rep = run_report(scalar_central_only());
  EXPECT_TRUE(rep.boundary);
  ASSERT_EQ(rep.epsilon_schedule.size(), 3u);
  EXPECT_DOUBLE_EQ(rep.epsilon_used, 1e-5);  // lambda_min(sigma_x) = 1

  // Shrunk optima decrease monotonically toward the limit and successive
  // differences contract (the shrink enters the objective linearly).
  const double v0 = rep.epsilon_schedule[0].value;
  const double v1 = rep.epsilon_schedule[1].value;
  const double v2 = rep.epsilon_schedule[2].value;
  EXPECT_NEAR(v0, 0.6951511908, 1e-7);
  EXPECT_NEAR(v1, 0.6933472201, 1e-7);
  EXPECT_NEAR(v2, 0.6931671805, 1e-7);
  EXPECT_GT(v0, v1);
  EXPECT_GT(v1, v2);
  EXPECT_GE((v0 - v1) / (v1 - v2), 3.0);

  // The headline value scores the final maximizer on the input problem and
  // lands on the forced closed form.
  EXPECT_NEAR(rep.value_nats, kLn2, 1e-6);
  EXPECT_NEAR(rep.solved_value_nats, v2, 1e-12);
  EXPECT_LE(rep.rate_gap, 1e-6 * (1.0 + rep.solved_value_nats));
  EXPECT_TRUE(rep.distortions.all_satisfied);
  EXPECT_EQ(rep.status, CertificateStatus::verified);
}

TEST(ReportTest, ExplicitEpsilonOverridesTheSchedule) {
  ReportOptions opt;
  opt.forced_epsilon = 1e-4;
  const RateReport rep = run_report(scalar_central_only(), opt);
  ASSERT_EQ(rep.epsilon_schedule.size(), 1u);
  EXPECT_DOUBLE_EQ(rep.epsilon_used, 1e-4);
  EXPECT_NEAR(rep.solved_value_nats, 0.6933472201, 1e-7);
  EXPECT_NEAR(rep.value_nats, kLn2, 1e-6);
}

TEST(ReportTest, UnreachableStationarityTargetDegradesToUnverified) {
  ReportOptions opt;
  opt.solver.grad_tol = 1e-18;
  const RateReport rep = run_report(scalar_interior(), opt);
  EXPECT_EQ(rep.status, CertificateStatus::unverified);
  EXPECT_FALSE(rep.unverified_reasons.empty());
  // The computation itself is still sound, only the certificate is weaker.
  EXPECT_NEAR(rep.value_nats, 0.703456824161, 1e-8);
  EXPECT_TRUE(rep.distortions.all_satisfied);
}

TEST(ReportTest, ValidationFailureThrowsTypedError) {
  try {
    run_report(scalar(1.0, 1.5, 0.5, 0.5));  // central distortion exceeds
    FAIL() << "expected a validation error";  // the source covariance
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::invalid_argument);
    EXPECT_NE(std::string(e.what()).find("validation"), std::string::npos);
  }
}

TEST(ReportTest, ImpossibleShrinkIsReportedAsFailed) {
  ReportOptions opt;
  opt.forced_epsilon = 10.0;  // larger than every distortion eigenvalue
  const RateReport rep = run_report(scalar_interior(), opt);
  EXPECT_EQ(rep.status, CertificateStatus::failed);
  ASSERT_FALSE(rep.failures.empty());
  const std::string text = report_to_text(rep);
  EXPECT_NE(text.find("failure:"), std::string::npos);
  EXPECT_NE(text.find("FAILED"), std::string::npos);
}

TEST(ReportTest, GeneralSpecIsPaddedBeforeSolving) {
  GeneralTreeSpec spec;
  spec.m = 1;
  spec.M = 3;
  spec.sigma_x = s1(1.0);
  spec.constraints = {{{1}, s1(0.6)}, {{2}, s1(0.65)}, {{3}, s1(0.7)},
                      {{1, 2}, s1(0.45)}, {{1, 2, 3}, s1(0.25)}};
  const RateReport rep = run_report(spec);
  EXPECT_TRUE(rep.padded);
  EXPECT_EQ(rep.original_descriptions, 3);
  EXPECT_EQ(rep.dummy_descriptions, 1);
  EXPECT_EQ(rep.input.L, 3);
  EXPECT_EQ(rep.relabel.size(), 3u);
  // The dummy description is unconstrained (D = sigma_x), so the padded
  // instance touches the boundary and the shrink schedule kicks in.
  EXPECT_TRUE(rep.boundary);
  EXPECT_NE(rep.status, CertificateStatus::failed);
  EXPECT_TRUE(rep.distortions.all_satisfied);
  EXPECT_LE(rep.rate_gap, 1e-6 * (1.0 + std::abs(rep.solved_value_nats)));
}

TEST(ReportTest, SimulationSectionRespectsTheCltBound) {
  ReportOptions opt;
  opt.mc_samples = 60000;
  opt.mc_seed = 7;
  const RateReport rep = run_report(pair_mixed(), opt);
  ASSERT_TRUE(rep.mc.has_value());
  EXPECT_EQ(rep.mc->n_samples, 60000);
  EXPECT_EQ(rep.mc->seed, 7u);
  EXPECT_GT(rep.mc_bound, 0.0);
  EXPECT_LE(rep.mc->max_deviation, rep.mc_bound);
  EXPECT_EQ(rep.status, CertificateStatus::verified);
  EXPECT_GT(rep.wall.mc_s, 0.0);
}

TEST(ReportTest, JsonCarriesTheFullCertificate) {
  ReportOptions opt;
  opt.mc_samples = 2000;
  const nlohmann::json j = report_to_json(run_report(scalar_interior(), opt));
  EXPECT_EQ(j.at("certificate_status"), "VERIFIED");
  EXPECT_EQ(j.at("instance").at("m"), 1);
  EXPECT_EQ(j.at("instance").at("L"), 2);
  const std::string digest = j.at("instance").at("sigma_digest");
  EXPECT_EQ(digest.substr(0, 2), "0x");
  EXPECT_EQ(digest.size(), 18u);
  EXPECT_TRUE(j.at("boundary").is_null());
  EXPECT_TRUE(j.at("theta_star").contains("1,1"));
  EXPECT_TRUE(j.at("multipliers").contains("2,2"));
  EXPECT_TRUE(j.at("sig_tilde").contains("2,1"));
  EXPECT_TRUE(j.at("kkt_residuals").contains("stationarity_max"));
  EXPECT_TRUE(j.at("enhancement_residuals").contains("max"));
  EXPECT_TRUE(j.at("lambda_min_eigs").contains("1,1"));
  EXPECT_EQ(j.at("distortions").at("entries").size(), 3u);
  EXPECT_TRUE(j.at("distortions").at("entries")[0].contains("required"));
  EXPECT_FALSE(j.at("mc").is_null());
  EXPECT_TRUE(j.at("mc").contains("bound"));
  EXPECT_TRUE(j.at("wall_times").contains("total_s"));
  const double nats = j.at("value_nats");
  const double bits = j.at("value_bits");
  EXPECT_NEAR(bits, nats / std::log(2.0), 1e-15);
}

TEST(ReportTest, BoundaryJsonListsTheEpsilonSequence) {
  const nlohmann::json j = report_to_json(run_report(scalar_central_only()));
  ASSERT_FALSE(j.at("boundary").is_null());
  EXPECT_DOUBLE_EQ(j.at("boundary").at("epsilon_used"), 1e-5);
  EXPECT_EQ(j.at("boundary").at("schedule").size(), 3u);
  EXPECT_TRUE(j.at("boundary").at("schedule")[0].contains("value_on_input"));
}

TEST(ReportTest, TextSummaryShowsValueAndStatus) {
  const RateReport rep = run_report(scalar_interior());
  const std::string nats = report_to_text(rep);
  EXPECT_NE(nats.find("certificate: VERIFIED"), std::string::npos);
  EXPECT_NE(nats.find("value: 0.703456824 nats"), std::string::npos);
  EXPECT_NE(nats.find("achievable rate:"), std::string::npos);
  EXPECT_NE(nats.find("distortion (1,1): satisfied"), std::string::npos);

  const std::string bits = report_to_text(rep, true);
  EXPECT_NE(bits.find("bits"), std::string::npos);
  EXPECT_NE(bits.find("value: 1.0148"), std::string::npos);
  // Stored fields are unchanged by the display unit.
  EXPECT_NEAR(rep.value_nats, 0.703456824161, 1e-8);
}

TEST(ReportTest, ReportsAreDeterministicForFixedSeeds) {
  ReportOptions opt;
  opt.mc_samples = 5000;
  opt.mc_seed = 3;
  nlohmann::json a = report_to_json(run_report(pair_mixed(), opt));
  nlohmann::json b = report_to_json(run_report(pair_mixed(), opt));
  a.erase("wall_times");
  b.erase("wall_times");
  EXPECT_EQ(a.dump(), b.dump());
}

}  // namespace
}  // namespace mdtree
