#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "pdro/image.hpp"

namespace pdro {

enum class SsimMode { global, windowed };

/// SSIM stabilizers and aggregation. Defaults are the usual K1 = 0.01, K2 = 0.03,
/// 11x11 Gaussian window with sigma 1.5, for intensities on [0, 1].
struct SsimConfig {
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;
    SsimMode mode = SsimMode::windowed;
    int window_size = 11;
    double window_sigma = 1.5;

    double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
    double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }

    /// Throws ParameterError on non-positive constants or an even/non-positive window.
    void validate() const;

    static SsimConfig global() { return SsimConfig{.mode = SsimMode::global}; }
    static SsimConfig windowed() { return SsimConfig{}; }
};

/// SSIM of two equally shaped images. Statistics use biased (1/n) normalization;
/// windowed mode averages the Gaussian-weighted index over every valid window.
double ssim(const Image& x, const Image& y, const SsimConfig& cfg);

/// Gradient of ssim(x, y) with respect to y.
std::vector<double> ssim_gradient(const Image& x, const Image& y, const SsimConfig& cfg);

/// Normalized Gaussian window, row-major window_size x window_size.
std::vector<double> gaussian_window(int size, double sigma);

enum class CostKind { one_minus_ssim, l2 };

/// Ground cost c0(x, x') between a reference image and a candidate. Any implementation
/// providing value and gradient in the second argument can drive the iterative attack.
class CostFunction {
public:
    virtual ~CostFunction() = default;

    virtual CostKind kind() const = 0;
    virtual std::string name() const = 0;

    virtual double value(const Image& x, const Image& y) const = 0;

    /// d value / d y.
    virtual std::vector<double> gradient(const Image& x, const Image& y) const = 0;
};

/// 1 - SSIM(x, y).
class SsimCost final : public CostFunction {
public:
    explicit SsimCost(SsimConfig cfg = {});

    CostKind kind() const override { return CostKind::one_minus_ssim; }
    std::string name() const override;
    double value(const Image& x, const Image& y) const override;
    std::vector<double> gradient(const Image& x, const Image& y) const override;

    const SsimConfig& config() const noexcept { return cfg_; }

private:
    SsimConfig cfg_;
};

/// Squared Euclidean pixel distance.
class L2Cost final : public CostFunction {
public:
    CostKind kind() const override { return CostKind::l2; }
    std::string name() const override { return "l2"; }
    double value(const Image& x, const Image& y) const override;
    std::vector<double> gradient(const Image& x, const Image& y) const override;
};

using CostPtr = std::shared_ptr<const CostFunction>;

/// Parses "ssim-global", "ssim-windowed" or "l2".
CostPtr make_cost(const std::string& name);

inline constexpr std::size_t kHessianPixelBudget = 4096;

/// Which costs `cost_hessian_at_base` accepts. `any_cost` is a debugging path used to
/// check the solver against costs with a known Hessian.
enum class HessianPolicy { global_ssim_only, any_cost };

/// Second derivative of y -> c0(x0, y) at y = x0.
struct CostHessian {
    Eigen::MatrixXd matrix;
    Image base_point;
};

/// Central differences (step 1e-4) of the analytic gradient, symmetrized as (H + H^T) / 2.
CostHessian cost_hessian_at_base(const CostFunction& cost, const Image& x0,
                                 HessianPolicy policy = HessianPolicy::global_ssim_only);

void write_hessian_csv(const CostHessian& h, const std::filesystem::path& path);

} // namespace pdro
