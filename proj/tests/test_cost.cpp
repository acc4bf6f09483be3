#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <cmath>

#include "pdro/cost.hpp"
#include "pdro/errors.hpp"
#include "test_support.hpp"

using namespace pdro;
using pdro::testing::random_image;

namespace {

double ssim_formula(double mx, double my, double vx, double vy, double cxy, double c1, double c2) {
    return (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
}

// Direct sliding-window evaluation with its own Gaussian weights.
double brute_windowed_ssim(const Image& x, const Image& y, int size, double sigma) {
    const int r = size / 2;
    std::vector<double> w(static_cast<std::size_t>(size * size));
    double total = 0;
    for (int i = 0; i < size; ++i)
        for (int j = 0; j < size; ++j) {
            const double d2 = (i - r) * (i - r) + (j - r) * (j - r);
            w[static_cast<std::size_t>(i * size + j)] = std::exp(-d2 / (2 * sigma * sigma));
            total += w[static_cast<std::size_t>(i * size + j)];
        }
    for (double& v : w) v /= total;
    const double c1 = 1e-4, c2 = 9e-4;
    double sum = 0;
    int count = 0;
    for (std::size_t top = 0; top + size <= x.height(); ++top)
        for (std::size_t left = 0; left + size <= x.width(); ++left) {
            double mx = 0, my = 0;
            for (int i = 0; i < size; ++i)
                for (int j = 0; j < size; ++j) {
                    const double wij = w[static_cast<std::size_t>(i * size + j)];
                    mx += wij * x(top + i, left + j);
                    my += wij * y(top + i, left + j);
                }
            double vx = 0, vy = 0, cxy = 0;
            for (int i = 0; i < size; ++i)
                for (int j = 0; j < size; ++j) {
                    const double wij = w[static_cast<std::size_t>(i * size + j)];
                    const double dx = x(top + i, left + j) - mx, dy = y(top + i, left + j) - my;
                    vx += wij * dx * dx;
                    vy += wij * dy * dy;
                    cxy += wij * dx * dy;
                }
            sum += ssim_formula(mx, my, vx, vy, cxy, c1, c2);
            ++count;
        }
    return sum / count;
}

double relative_error(const std::vector<double>& got, const std::vector<double>& want) {
    double diff = 0, norm = 0;
    for (std::size_t i = 0; i < got.size(); ++i) {
        diff += (got[i] - want[i]) * (got[i] - want[i]);
        norm += want[i] * want[i];
    }
    return std::sqrt(diff) / std::max(std::sqrt(norm), 1e-300);
}

std::vector<double> fd_gradient(const CostFunction& c, const Image& x, Image y, double h = 1e-5) {
    std::vector<double> g(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double keep = y[i];
        y[i] = keep + h;
        const double up = c.value(x, y);
        y[i] = keep - h;
        const double down = c.value(x, y);
        y[i] = keep;
        g[i] = (up - down) / (2 * h);
    }
    return g;
}

} // namespace

TEST(Ssim, IdentityIsOne) {
    Rng rng(1);
    for (int t = 0; t < 20; ++t) {
        const Image x = random_image(12, 14, rng);
        EXPECT_NEAR(ssim(x, x, SsimConfig::global()), 1.0, 1e-15);
        EXPECT_NEAR(ssim(x, x, SsimConfig::windowed()), 1.0, 1e-15);
    }
}

TEST(Ssim, ConstantBlackVersusWhite) {
    const Image zero(8, 8, 0.0), one(8, 8, 1.0);
    const double c1 = 1e-4;
    EXPECT_NEAR(ssim(zero, one, SsimConfig::global()), c1 / (1 + c1), 1e-15);
    EXPECT_NEAR(ssim(zero, one, SsimConfig::global()), 9.999e-5, 1e-8);
    const SsimCost cost(SsimConfig::global());
    EXPECT_NEAR(cost.value(zero, one), 1 - c1 / (1 + c1), 1e-15);
}

TEST(Ssim, GlobalMatchesClosedForm) {
    Rng rng(2);
    const Image x = random_image(5, 6, rng), y = random_image(5, 6, rng);
    const double n = 30;
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < 30; ++i) {
        mx += x[i] / n;
        my += y[i] / n;
    }
    double vx = 0, vy = 0, cxy = 0;
    for (std::size_t i = 0; i < 30; ++i) {
        vx += (x[i] - mx) * (x[i] - mx) / n;
        vy += (y[i] - my) * (y[i] - my) / n;
        cxy += (x[i] - mx) * (y[i] - my) / n;
    }
    EXPECT_NEAR(ssim(x, y, SsimConfig::global()), ssim_formula(mx, my, vx, vy, cxy, 1e-4, 9e-4), 1e-14);
}

TEST(Ssim, WindowedMatchesBruteForce) {
    Rng rng(3);
    for (int t = 0; t < 10; ++t) {
        const Image x = random_image(15, 18, rng), y = random_image(15, 18, rng);
        EXPECT_NEAR(ssim(x, y, SsimConfig::windowed()), brute_windowed_ssim(x, y, 11, 1.5), 1e-10);
    }
    SsimConfig small = SsimConfig::windowed();
    small.window_size = 3;
    small.window_sigma = 0.8;
    const Image x = random_image(6, 5, rng), y = random_image(6, 5, rng);
    EXPECT_NEAR(ssim(x, y, small), brute_windowed_ssim(x, y, 3, 0.8), 1e-10);
}

TEST(Ssim, ShapeAndConfigErrors) {
    EXPECT_THROW(ssim(Image(4, 4), Image(4, 5), SsimConfig::global()), DimensionError);
    EXPECT_THROW(ssim(Image(8, 8), Image(8, 8), SsimConfig::windowed()), DimensionError);
    SsimConfig bad = SsimConfig::windowed();
    bad.window_size = 10;
    EXPECT_THROW(bad.validate(), ParameterError);
    bad = SsimConfig::global();
    bad.k1 = 0;
    EXPECT_THROW(bad.validate(), ParameterError);
    EXPECT_THROW(make_cost("pieapp"), ParameterError);
}

TEST(Ssim, GaussianWindowNormalized) {
    const auto w = gaussian_window(11, 1.5);
    ASSERT_EQ(w.size(), 121u);
    double s = 0;
    for (double v : w) s += v;
    EXPECT_NEAR(s, 1.0, 1e-14);
    EXPECT_EQ(w[60], *std::max_element(w.begin(), w.end()));
    EXPECT_DOUBLE_EQ(w[0], w[120]);
}

TEST(CostContract, ZeroSymmetricPositiveBounded) {
    Rng rng(4);
    const CostPtr costs[] = {make_cost("ssim-global"), make_cost("ssim-windowed"), make_cost("l2")};
    for (const auto& c : costs) {
        for (int t = 0; t < 1000; ++t) {
            const Image x = random_image(11, 12, rng);
            Image y = random_image(11, 12, rng);
            if (t % 2 == 0) {
                // small perturbation with ||y - x||_inf >= 1e-3
                y = x;
                const std::size_t k = rng.below(y.size());
                y[k] = x[k] > 0.5 ? x[k] - 1e-3 : x[k] + 1e-3;
            }
            EXPECT_EQ(c->value(x, x), 0.0);
            const double v = c->value(x, y);
            EXPECT_GT(v, 0.0) << c->name();
            EXPECT_NEAR(v, c->value(y, x), 1e-10);
            if (c->kind() == CostKind::one_minus_ssim) {
                EXPECT_LE(v, 2.0);
                // independent noise images may anti-correlate; perturbations may not
                if (t % 2 == 0) EXPECT_LE(v, 1.0);
            }
        }
    }
}

TEST(CostContract, L2ValueAndGradient) {
    const L2Cost c;
    Rng rng(5);
    const Image x = random_image(4, 4, rng);
    Image y = x;
    y[3] += 0.5;
    EXPECT_NEAR(c.value(x, y), 0.25, 1e-15);
    const Image z = random_image(4, 4, rng);
    const auto g = c.gradient(x, z);
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(g[i], 2 * (z[i] - x[i]));
}

TEST(CostGradient, ZeroAtMinimizer) {
    Rng rng(6);
    for (const char* name : {"ssim-global", "ssim-windowed", "l2"}) {
        const auto c = make_cost(name);
        const Image x = random_image(12, 12, rng);
        double norm = 0;
        for (double v : c->gradient(x, x)) norm += v * v;
        EXPECT_LE(std::sqrt(norm), 1e-10) << name;
    }
}

TEST(CostGradient, MatchesFiniteDifferences) {
    Rng rng(7);
    const auto global = make_cost("ssim-global");
    const auto windowed = make_cost("ssim-windowed");
    for (int t = 0; t < 100; ++t) {
        const Image x = random_image(7, 8, rng);
        const Image y = random_image(7, 8, rng);
        EXPECT_LE(relative_error(global->gradient(x, y), fd_gradient(*global, x, y)), 1e-4);
        const Image xw = random_image(12, 13, rng);
        Image yw = xw;
        for (double& v : yw.pixels()) v = std::clamp(v + rng.uniform(-0.2, 0.2), 0.0, 1.0);
        EXPECT_LE(relative_error(windowed->gradient(xw, yw), fd_gradient(*windowed, xw, yw)), 1e-4);
    }
}

TEST(CostHessianTest, PositiveSemidefiniteAtBase) {
    Rng rng(8);
    const SsimCost cost(SsimConfig::global());
    for (int t = 0; t < 5; ++t) {
        const Image x0 = random_image(10, 10, rng);
        const auto h = cost_hessian_at_base(cost, x0);
        EXPECT_EQ(h.base_point, x0);
        ASSERT_EQ(h.matrix.rows(), 100);
        EXPECT_LE((h.matrix - h.matrix.transpose()).norm(), 1e-8 * h.matrix.norm());
        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h.matrix);
        EXPECT_GE(es.eigenvalues().minCoeff(), -1e-6 * es.eigenvalues().maxCoeff());
    }
}

TEST(CostHessianTest, MatchesDirectionalSecondDifference) {
    Rng rng(9);
    const SsimCost cost(SsimConfig::global());
    for (int t = 0; t < 10; ++t) {
        const Image x0 = random_image(8, 9, rng);
        const auto h = cost_hessian_at_base(cost, x0);
        Eigen::VectorXd v(72);
        for (Eigen::Index i = 0; i < 72; ++i) v(i) = rng.normal();
        v.normalize();
        const double step = 1e-3;
        Image up = x0, down = x0;
        for (std::size_t i = 0; i < 72; ++i) {
            up[i] += step * v(static_cast<Eigen::Index>(i));
            down[i] -= step * v(static_cast<Eigen::Index>(i));
        }
        const double second = (cost.value(x0, up) - 2 * cost.value(x0, x0) + cost.value(x0, down)) / (step * step);
        const double quad = v.dot(h.matrix * v);
        EXPECT_NEAR(quad, second, 1e-3 * std::abs(second));
        // Hessian-vector product against a gradient difference
        const auto gu = cost.gradient(x0, up), gd = cost.gradient(x0, down);
        std::vector<double> hv(72), fd(72);
        const Eigen::VectorXd hv_e = h.matrix * v;
        for (std::size_t i = 0; i < 72; ++i) {
            hv[i] = hv_e(static_cast<Eigen::Index>(i));
            fd[i] = (gu[i] - gd[i]) / (2 * step);
        }
        EXPECT_LE(relative_error(hv, fd), 1e-3);
    }
}

TEST(CostHessianTest, PolicyAndBudget) {
    Rng rng(10);
    const Image x0 = random_image(12, 12, rng);
    const auto windowed = make_cost("ssim-windowed");
    const auto l2 = make_cost("l2");
    EXPECT_THROW(cost_hessian_at_base(*windowed, x0), CapabilityError);
    EXPECT_THROW(cost_hessian_at_base(*l2, x0), CapabilityError);
    const auto h = cost_hessian_at_base(*l2, x0, HessianPolicy::any_cost);
    EXPECT_LE((h.matrix - 2 * Eigen::MatrixXd::Identity(144, 144)).cwiseAbs().maxCoeff(), 1e-8);
    const SsimCost global(SsimConfig::global());
    EXPECT_THROW(cost_hessian_at_base(global, Image(65, 64, 0.5)), SizeError);
}

TEST(CostHessianTest, CsvExport) {
    pdro::testing::TempDir dir;
    Rng rng(11);
    const SsimCost cost(SsimConfig::global());
    const auto h = cost_hessian_at_base(cost, random_image(3, 3, rng));
    write_hessian_csv(h, dir / "h.csv");
    const std::string text = pdro::testing::slurp(dir / "h.csv");
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 9);
    EXPECT_EQ(std::count(text.begin(), text.end(), ','), 9 * 8);
}
