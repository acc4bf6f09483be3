#include "pdro/stats.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <set>

#include "pdro/errors.hpp"
#include "pdro/format.hpp"
#include "pdro/parallel.hpp"
#include "pdro/rng.hpp"

namespace pdro {

namespace {

// Continued fraction for I_x(a, b), valid for x < (a + 1) / (a + b + 2).
double beta_continued_fraction(double a, double b, double x) {
    constexpr int kMaxIter = 10000;
    constexpr double kEps = 1e-16;
    constexpr double kTiny = 1e-300;
    const double qab = a + b, qap = a + 1, qam = a - 1;
    double c = 1, d = 1 - qab * x / qap;
    if (std::abs(d) < kTiny) d = kTiny;
    d = 1 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1) < kEps) return h;
    }
    throw NumericError("incomplete beta continued fraction did not converge");
}

double weight_for(const GroupRecord& r, GlsWeighting w) {
    const auto n = static_cast<double>(r.n);
    return w == GlsWeighting::inverse_sqrt_n ? std::sqrt(n) : n;
}

double quantile_sorted(const std::vector<double>& v, double q) {
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::ofstream open_csv(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    return out;
}

} // namespace

double log_gamma(double x) {
    if (!(x > 0)) throw ParameterError("log_gamma needs a positive argument");
    static constexpr std::array<double, 9> kCoef = {
        0.99999999999980993,  676.5203681218851,     -1259.1392167224028,
        771.32342877765313,   -176.61502916214059,   12.507343278686905,
        -0.13857109526572012, 9.9843695780195716e-6, 1.5056327351493116e-7};
    if (x < 0.5) {
        // Reflection: Gamma(x) Gamma(1 - x) = pi / sin(pi x).
        return std::log(std::numbers::pi / std::sin(std::numbers::pi * x)) - log_gamma(1 - x);
    }
    const double z = x - 1;
    double sum = kCoef[0];
    for (int i = 1; i < 9; ++i) sum += kCoef[i] / (z + i);
    const double t = z + 7.5;
    return 0.5 * std::log(2 * std::numbers::pi) + (z + 0.5) * std::log(t) - t + std::log(sum);
}

double regularized_incomplete_beta(double a, double b, double x) {
    if (!(a > 0) || !(b > 0)) throw ParameterError("incomplete beta needs a, b > 0");
    if (!(x >= 0 && x <= 1)) throw ParameterError("incomplete beta needs x in [0, 1]");
    if (x == 0) return 0;
    if (x == 1) return 1;
    const double log_front =
        log_gamma(a + b) - log_gamma(a) - log_gamma(b) + a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(log_front);
    if (x < (a + 1) / (a + b + 2)) return front * beta_continued_fraction(a, b, x) / a;
    return 1 - front * beta_continued_fraction(b, a, 1 - x) / b;
}

double f_survival(double f0, double nu1, double nu2) {
    if (!(nu1 >= 1) || !(nu2 >= 1)) throw ParameterError("F distribution needs nu1, nu2 >= 1");
    if (std::isnan(f0) || f0 < 0) throw ParameterError("F statistic must be non-negative");
    if (f0 == 0) return 1;
    if (std::isinf(f0)) return 0;
    // P(F > f) = I_{nu2 / (nu2 + nu1 f)}(nu2 / 2, nu1 / 2)
    return regularized_incomplete_beta(nu2 / 2, nu1 / 2, nu2 / (nu2 + nu1 * f0));
}

double t_survival(double t, double df) {
    if (!(df > 0)) throw ParameterError("t distribution needs df > 0");
    if (std::isnan(t)) throw ParameterError("t statistic is NaN");
    if (std::isinf(t)) return t > 0 ? 0 : 1;
    const double tail = 0.5 * regularized_incomplete_beta(df / 2, 0.5, df / (df + t * t));
    return t >= 0 ? tail : 1 - tail;
}

KsResult ks_uniform_test(std::vector<double> samples) {
    if (samples.empty()) throw ParameterError("KS test needs samples");
    std::sort(samples.begin(), samples.end());
    const auto n = static_cast<double>(samples.size());
    double d = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double u = std::clamp(samples[i], 0.0, 1.0);
        d = std::max({d, (static_cast<double>(i) + 1) / n - u, u - static_cast<double>(i) / n});
    }
    const double sqrt_n = std::sqrt(n);
    const double lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    double q = 0, sign = 1;
    for (int j = 1; j <= 200; ++j) {
        const double term = sign * 2 * std::exp(-2.0 * j * j * lambda * lambda);
        q += term;
        if (std::abs(term) < 1e-16) break;
        sign = -sign;
    }
    return {d, std::clamp(lambda < 1e-3 ? 1.0 : q, 0.0, 1.0)};
}

GroupAccuracy group_accuracy(const Model& m, const Dataset& d, const GroupMeta& meta) {
    if (!d.has_groups()) throw ParameterError("dataset carries no group ids");
    std::map<int, GroupRecord> by_group;
    for (const auto& [id, g] : meta) by_group[id] = {id, g, 0, 0};
    for (std::size_t i = 0; i < d.size(); ++i) {
        const auto it = by_group.find(d.group_ids[i]);
        if (it == by_group.end())
            throw ParameterError("example " + std::to_string(i) + " has unknown group " +
                                 std::to_string(d.group_ids[i]));
        ++it->second.n;
        it->second.correct += predict(m, d.examples[i].image) == d.examples[i].label;
    }
    GroupAccuracy out;
    for (const auto& [id, rec] : by_group) {
        if (rec.n == 0) {
            ++out.omitted_empty;
            continue;
        }
        out.records.push_back(rec);
    }
    return out;
}

GlsResult gls_fit_weighted(std::span<const double> g, std::span<const double> p,
                           std::span<const double> weights, bool allow_two_groups) {
    const std::size_t m = g.size();
    if (p.size() != m || weights.size() != m) throw DimensionError("GLS inputs differ in length");
    if (m < 2 || (m < 3 && !allow_two_groups))
        throw ParameterError("GLS needs at least 3 groups, got " + std::to_string(m));
    for (double w : weights)
        if (!(w > 0) || !std::isfinite(w)) throw ParameterError("GLS weights must be positive");
    if (std::all_of(g.begin(), g.end(), [&](double v) { return v == g[0]; }))
        throw RankError("all regressor values are equal; the slope is not identifiable");

    double sw = 0, swg = 0, swp = 0;
    for (std::size_t i = 0; i < m; ++i) {
        sw += weights[i];
        swg += weights[i] * g[i];
        swp += weights[i] * p[i];
    }
    const double g_bar = swg / sw, p_bar = swp / sw;
    double sxx = 0, sxy = 0, rss_restricted = 0;
    for (std::size_t i = 0; i < m; ++i) {
        sxx += weights[i] * (g[i] - g_bar) * (g[i] - g_bar);
        sxy += weights[i] * (g[i] - g_bar) * (p[i] - p_bar);
        rss_restricted += weights[i] * (p[i] - p_bar) * (p[i] - p_bar);
    }
    GlsResult r;
    r.beta = sxy / sxx;
    r.intercept = p_bar - r.beta * g_bar;
    r.nu1 = 1;
    r.nu2 = static_cast<int>(m) - 2;
    double rss_full = 0;
    for (std::size_t i = 0; i < m; ++i) {
        const double res = p[i] - r.intercept - r.beta * g[i];
        rss_full += weights[i] * res * res;
    }
    double scale = 0;
    for (std::size_t i = 0; i < m; ++i) scale += weights[i] * p[i] * p[i];
    const double tiny = 1e-24 * std::max(1.0, scale);
    if (rss_restricted <= tiny) {
        r.constant_response = true;
        r.f0 = 0;
        r.p_value = 1;
        return r;
    }
    if (rss_full <= tiny || r.nu2 == 0) {
        r.perfect_fit = true;
        r.f0 = std::numeric_limits<double>::infinity();
        r.p_value = 0;
        return r;
    }
    r.f0 = std::max(0.0, rss_restricted - rss_full) / (rss_full / r.nu2);
    r.p_value = f_survival(r.f0, r.nu1, r.nu2);
    return r;
}

GlsResult gls_fit(std::span<const GroupRecord> records, const GlsOptions& options) {
    std::vector<double> g, p, w;
    for (const auto& r : records) {
        if (r.n == 0 || r.correct > r.n) throw ParameterError("group record counts are inconsistent");
        g.push_back(r.g);
        p.push_back(r.p());
        w.push_back(weight_for(r, options.weighting));
    }
    return gls_fit_weighted(g, p, w, options.allow_two_groups);
}

TTestResult two_sample_t_test(std::span<const double> a, std::span<const double> b,
                              Alternative alternative) {
    if (a.size() < 2 || b.size() < 2) throw ParameterError("t-test needs at least 2 values per sample");
    const auto moments = [](std::span<const double> v) {
        const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        double ss = 0;
        for (double x : v) ss += (x - mean) * (x - mean);
        return std::pair{mean, ss / static_cast<double>(v.size() - 1)};
    };
    const auto [mean_a, var_a] = moments(a);
    const auto [mean_b, var_b] = moments(b);
    const double ra = static_cast<double>(a.size()), rb = static_cast<double>(b.size());
    const double va = var_a / ra, vb = var_b / rb;
    const double diff = alternative == Alternative::a_less_than_b ? mean_b - mean_a : mean_a - mean_b;
    TTestResult r;
    if (va + vb == 0) {
        if (diff == 0) throw UndefinedStatisticError("both samples are constant with equal means");
        r.t = diff > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
        r.df = ra + rb - 2;
        r.p_value = diff > 0 ? 0 : 1;
        return r;
    }
    r.t = diff / std::sqrt(va + vb);
    r.df = (va + vb) * (va + vb) / (va * va / (ra - 1) + vb * vb / (rb - 1));
    r.p_value = t_survival(r.t, r.df);
    return r;
}

GroupedDataset make_grouped_dataset(const Dataset& base, const GroupedDatasetSpec& spec) {
    if (spec.groups < 3) throw ParameterError("a grouped dataset needs at least 3 groups");
    if (static_cast<std::size_t>(spec.groups) > base.size())
        throw ParameterError("more groups (" + std::to_string(spec.groups) + ") than examples (" +
                             std::to_string(base.size()) + ")");
    if (!(spec.slope > 0)) throw ParameterError("log-income grid spacing must be positive");
    if (!(spec.noise_scale >= 0)) throw ParameterError("noise scale must be non-negative");
    if (!(spec.size_exponent > 0)) throw ParameterError("size exponent must be positive");
    base.check();

    const auto groups = static_cast<std::size_t>(spec.groups);
    Rng rng = Rng::stream(spec.seed, 0);

    // Pareto(size_exponent) group shares; every group keeps at least one example.
    std::vector<double> share(groups);
    for (double& s : share) {
        double u = rng.uniform();
        while (u <= 0) u = rng.uniform();
        s = std::pow(u, -1.0 / spec.size_exponent);
    }
    const double share_total = std::accumulate(share.begin(), share.end(), 0.0);
    const std::size_t spare = base.size() - groups;
    std::vector<std::size_t> sizes(groups, 1);
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t j = 0; j < groups; ++j) {
        const double exact = static_cast<double>(spare) * share[j] / share_total;
        const auto whole = static_cast<std::size_t>(std::floor(exact));
        sizes[j] += whole;
        assigned += whole;
        remainders.push_back({exact - static_cast<double>(whole), j});
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& x, const auto& y) { return x.first > y.first; });
    for (std::size_t k = 0; assigned < spare; ++k, ++assigned) ++sizes[remainders[k].second];

    std::vector<std::size_t> order(base.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    GroupedDataset out;
    out.data = base;
    out.data.group_ids.assign(base.size(), 0);
    const double g_min = 7.0, g_max = 7.0 + spec.slope * static_cast<double>(groups - 1);
    for (std::size_t j = 0; j < groups; ++j) out.meta[static_cast<int>(j)] = g_min + spec.slope * static_cast<double>(j);

    std::size_t cursor = 0;
    for (std::size_t j = 0; j < groups; ++j) {
        const double g = out.meta[static_cast<int>(j)];
        const double sd = spec.noise_scale * (g_max - g) / (g_max - g_min);
        for (std::size_t k = 0; k < sizes[j]; ++k, ++cursor) {
            const std::size_t idx = order[cursor];
            out.data.group_ids[idx] = static_cast<int>(j);
            if (sd == 0) continue;
            Rng noise = Rng::stream(spec.seed, 1 + idx);
            for (double& v : out.data.examples[idx].image.pixels())
                v = std::clamp(v + sd * noise.normal(), 0.0, 1.0);
        }
    }
    return out;
}

BetaSummary summarize_betas(std::vector<double> betas) {
    if (betas.empty()) throw ParameterError("no slopes to summarize");
    std::sort(betas.begin(), betas.end());
    BetaSummary s;
    s.count = betas.size();
    s.mean = std::accumulate(betas.begin(), betas.end(), 0.0) / static_cast<double>(betas.size());
    s.min = betas.front();
    s.max = betas.back();
    s.q1 = quantile_sorted(betas, 0.25);
    s.median = quantile_sorted(betas, 0.5);
    s.q3 = quantile_sorted(betas, 0.75);
    return s;
}

AuditResult audit_population(std::span<const Model> models, const Dataset& d,
                             const GroupMeta& meta, const GlsOptions& options,
                             std::size_t workers) {
    if (models.empty()) throw ParameterError("audit needs at least one model");
    AuditResult out;
    out.fits.resize(models.size());
    parallel_for(models.size(), workers, [&](std::size_t i) {
        out.fits[i] = gls_fit(group_accuracy(models[i], d, meta).records, options);
    });
    std::vector<double> betas;
    for (const auto& f : out.fits) betas.push_back(f.beta);
    out.summary = summarize_betas(std::move(betas));
    return out;
}

void write_group_records_csv(std::span<const GroupRecord> records, const std::filesystem::path& path) {
    auto out = open_csv(path);
    out << "group_id,g,n,correct\n";
    for (const auto& r : records)
        out << r.group_id << ',' << format_double(r.g) << ',' << r.n << ',' << r.correct << '\n';
}

std::vector<GroupRecord> read_group_records_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "group_id,g,n,correct")
        throw FormatError("expected header group_id,g,n,correct in " + path.string());
    std::vector<GroupRecord> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv(line);
        if (f.size() != 4) throw FormatError("bad group record row: " + line);
        GroupRecord r{std::stoi(f[0]), std::stod(f[1]), std::stoull(f[2]), std::stoull(f[3])};
        if (r.n == 0 || r.correct > r.n) throw FormatError("inconsistent counts in row: " + line);
        out.push_back(r);
    }
    return out;
}

void write_group_membership_csv(const GroupedDataset& gd, const std::filesystem::path& path) {
    auto out = open_csv(path);
    out << "example_index,group_id,g\n";
    for (std::size_t i = 0; i < gd.data.size(); ++i)
        out << i << ',' << gd.data.group_ids[i] << ',' << format_double(gd.meta.at(gd.data.group_ids[i]))
            << '\n';
}

GroupMeta read_group_membership_csv(const std::filesystem::path& path, Dataset& d) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "example_index,group_id,g")
        throw FormatError("expected header example_index,group_id,g in " + path.string());
    GroupMeta meta;
    d.group_ids.assign(d.size(), -1);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv(line);
        if (f.size() != 3) throw FormatError("bad membership row: " + line);
        const auto idx = std::stoull(f[0]);
        if (idx >= d.size()) throw ConsistencyError("membership row for missing example " + f[0]);
        const int id = std::stoi(f[1]);
        d.group_ids[idx] = id;
        meta[id] = std::stod(f[2]);
    }
    if (std::find(d.group_ids.begin(), d.group_ids.end(), -1) != d.group_ids.end())
        throw ConsistencyError("membership file does not cover every example");
    return meta;
}

void write_audit_csv(std::span<const GlsResult> fits, const std::filesystem::path& path) {
    auto out = open_csv(path);
    out << "model_id,beta,intercept,F0,nu1,nu2,p_value\n";
    for (std::size_t i = 0; i < fits.size(); ++i) {
        const auto& f = fits[i];
        out << i << ',' << format_double(f.beta) << ',' << format_double(f.intercept) << ','
            << format_double(f.f0) << ',' << f.nu1 << ',' << f.nu2 << ',' << format_double(f.p_value)
            << '\n';
    }
}

void write_beta_summary_csv(const BetaSummary& s, const std::filesystem::path& path) {
    auto out = open_csv(path);
    out << "count,mean,min,q1,median,q3,max\n"
        << s.count << ',' << format_double(s.mean) << ',' << format_double(s.min) << ','
        << format_double(s.q1) << ',' << format_double(s.median) << ',' << format_double(s.q3) << ','
        << format_double(s.max) << '\n';
}

} // namespace pdro
