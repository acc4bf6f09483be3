#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include "pdro/classifier.hpp"
#include "pdro/image.hpp"

namespace pdro {

// -- special functions ------------------------------------------------------------------

/// ln Gamma(x) for x > 0 (Lanczos, g = 7, nine terms).
double log_gamma(double x);

/// Regularized incomplete beta I_x(a, b), continued fraction evaluated with modified Lentz.
double regularized_incomplete_beta(double a, double b, double x);

/// P(F > f0) for F ~ F(nu1, nu2).
double f_survival(double f0, double nu1, double nu2);

/// P(T > t) for T ~ Student t with df degrees of freedom.
double t_survival(double t, double df);

struct KsResult {
    double statistic = 0; // sup |F_n - F|
    double p_value = 0;
};

/// One-sample Kolmogorov-Smirnov test against Uniform(0, 1) (asymptotic p-value with
/// the Stephens small-sample correction).
KsResult ks_uniform_test(std::vector<double> samples);

// -- grouped accuracy and GLS -----------------------------------------------------------

struct GroupRecord {
    int group_id = 0;
    double g = 0;       // log income, the regressor
    std::size_t n = 0;  // examples in the group
    std::size_t correct = 0;

    double p() const { return static_cast<double>(correct) / static_cast<double>(n); }
};

using GroupMeta = std::map<int, double>; // group id -> g

struct GroupAccuracy {
    std::vector<GroupRecord> records; // ascending group id, empty groups omitted
    std::size_t omitted_empty = 0;
};

/// Per-group counts of correctly classified examples. Throws ParameterError when an
/// example has no group id or one missing from `meta`.
GroupAccuracy group_accuracy(const Model& m, const Dataset& d, const GroupMeta& meta);

/// Diagonal covariance used by the regression.
/// inverse_sqrt_n: Sigma_ii = 1 / sqrt(n_i), i.e. weights sqrt(n_i)
/// inverse_n:      Sigma_ii = 1 / n_i, i.e. weights n_i
enum class GlsWeighting { inverse_sqrt_n, inverse_n };

struct GlsOptions {
    GlsWeighting weighting = GlsWeighting::inverse_sqrt_n;
    /// Accept two groups (an exact interpolation); normally at least three are required.
    bool allow_two_groups = false;
};

struct GlsResult {
    double beta = 0;
    double intercept = 0;
    double f0 = 0;
    int nu1 = 1;
    int nu2 = 0;
    double p_value = 1;
    bool perfect_fit = false;       // weighted residuals vanish while the slope explains variance
    bool constant_response = false; // every p_i equal: no variance to explain
};

/// Weighted least squares of p on (1, g) with weights Sigma^-1, plus the slope F-test
/// against the intercept-only model.
GlsResult gls_fit(std::span<const GroupRecord> records, const GlsOptions& options = {});

/// Same fit from raw (g, p, weight) triples.
GlsResult gls_fit_weighted(std::span<const double> g, std::span<const double> p,
                           std::span<const double> weights, bool allow_two_groups = false);

// -- two-sample comparison --------------------------------------------------------------

enum class Alternative { a_less_than_b, a_greater_than_b };

struct TTestResult {
    double t = 0;
    double df = 0;      // Welch-Satterthwaite
    double p_value = 0; // one-sided
};

/// Welch two-sample t-test. For a_less_than_b, t = (mean_b - mean_a) / se and
/// p = P(T > t); the other alternative swaps the roles.
TTestResult two_sample_t_test(std::span<const double> a, std::span<const double> b,
                              Alternative alternative = Alternative::a_less_than_b);

// -- synthetic grouped data ---------------------------------------------------------------

struct GroupedDatasetSpec {
    int groups = 41;
    double slope = 0.1;       // spacing of the log-income grid: g_j = 7 + slope * j
    double noise_scale = 0.6; // pixel noise sd at the poorest group
    double size_exponent = 1.5; // Pareto tail index of the group sizes
    std::uint64_t seed = 0;
};

struct GroupedDataset {
    Dataset data; // group_ids filled
    GroupMeta meta;
};

/// Partitions `base` into groups of power-law sizes, assigns each a log-income on a
/// grid, and adds Gaussian pixel noise with sd noise_scale (g_max - g) / (g_max - g_min).
GroupedDataset make_grouped_dataset(const Dataset& base, const GroupedDatasetSpec& spec);

// -- population audit -------------------------------------------------------------------

struct BetaSummary {
    std::size_t count = 0;
    double mean = 0, min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};

/// Quartiles by linear interpolation between order statistics.
BetaSummary summarize_betas(std::vector<double> betas);

struct AuditResult {
    std::vector<GlsResult> fits; // one per model, input order
    BetaSummary summary;
};

AuditResult audit_population(std::span<const Model> models, const Dataset& d,
                             const GroupMeta& meta, const GlsOptions& options = {},
                             std::size_t workers = 1);

// -- CSV --------------------------------------------------------------------------------

void write_group_records_csv(std::span<const GroupRecord> records, const std::filesystem::path& path);
std::vector<GroupRecord> read_group_records_csv(const std::filesystem::path& path);

/// Per-example membership: example_index,group_id,g.
void write_group_membership_csv(const GroupedDataset& gd, const std::filesystem::path& path);
/// Fills d.group_ids and returns the group meta.
GroupMeta read_group_membership_csv(const std::filesystem::path& path, Dataset& d);

void write_audit_csv(std::span<const GlsResult> fits, const std::filesystem::path& path);
void write_beta_summary_csv(const BetaSummary& s, const std::filesystem::path& path);

} // namespace pdro
