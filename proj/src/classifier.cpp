#include "pdro/classifier.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>

#include "pdro/errors.hpp"

namespace pdro {

namespace {

constexpr char kCheckpointMagic[8] = {'P', 'D', 'R', 'O', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

// Activations kept for the backward pass.
struct Trace {
    std::vector<double> hidden;       // mlp: tanh activations; convnet: pooled features
    std::vector<double> conv_act;     // convnet: tanh(conv) [channels x rows x cols]
    std::vector<std::size_t> pool_src; // convnet: conv_act index feeding each pooled feature
    std::vector<double> logits;
};

void check_input(const Model& m, const Image& x) {
    if (x.height() != m.input_height() || x.width() != m.input_width())
        throw DimensionError("model expects " + std::to_string(m.input_height()) + "x" +
                             std::to_string(m.input_width()) + " input, got " +
                             std::to_string(x.height()) + "x" + std::to_string(x.width()));
}

void check_label(const Model& m, int label) {
    if (label < 0 || label >= m.class_count())
        throw ParameterError("label " + std::to_string(label) + " outside [0, " +
                             std::to_string(m.class_count()) + ")");
}

Trace forward(const Model& m, const Image& x) {
    check_input(m, x);
    const auto& L = m.layout();
    const double* p = m.params().data();
    const auto C = static_cast<std::size_t>(m.class_count());
    Trace t;
    if (m.architecture() == Architecture::mlp) {
        const std::size_t n = x.size();
        t.hidden.resize(L.hidden);
        for (std::size_t h = 0; h < L.hidden; ++h) {
            const double* w = p + L.w1 + h * n;
            double s = p[L.b1 + h];
            for (std::size_t i = 0; i < n; ++i) s += w[i] * x[i];
            t.hidden[h] = std::tanh(s);
        }
    } else {
        const std::size_t rows = L.conv_rows, cols = L.conv_cols, width = x.width();
        t.conv_act.resize(kConvChannels * rows * cols);
        for (std::size_t ch = 0; ch < kConvChannels; ++ch) {
            const double* k = p + L.w1 + ch * kConvKernel * kConvKernel;
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) {
                    double s = p[L.b1 + ch];
                    for (std::size_t i = 0; i < kConvKernel; ++i)
                        for (std::size_t j = 0; j < kConvKernel; ++j)
                            s += k[i * kConvKernel + j] * x[(r + i) * width + c + j];
                    t.conv_act[(ch * rows + r) * cols + c] = std::tanh(s);
                }
        }
        t.hidden.resize(L.hidden);
        t.pool_src.resize(L.hidden);
        for (std::size_t ch = 0; ch < kConvChannels; ++ch)
            for (std::size_t pr = 0; pr < L.pool_rows; ++pr)
                for (std::size_t pc = 0; pc < L.pool_cols; ++pc) {
                    std::size_t best = (ch * rows + 2 * pr) * cols + 2 * pc;
                    for (std::size_t di = 0; di < 2; ++di)
                        for (std::size_t dj = 0; dj < 2; ++dj) {
                            const std::size_t idx = (ch * rows + 2 * pr + di) * cols + 2 * pc + dj;
                            if (t.conv_act[idx] > t.conv_act[best]) best = idx;
                        }
                    const std::size_t f = (ch * L.pool_rows + pr) * L.pool_cols + pc;
                    t.hidden[f] = t.conv_act[best];
                    t.pool_src[f] = best;
                }
    }
    t.logits.resize(C);
    for (std::size_t k = 0; k < C; ++k) {
        const double* w = p + L.w2 + k * L.hidden;
        double s = p[L.b2 + k];
        for (std::size_t h = 0; h < L.hidden; ++h) s += w[h] * t.hidden[h];
        t.logits[k] = s;
    }
    return t;
}

double log_sum_exp(const std::vector<double>& v) {
    const double top = *std::max_element(v.begin(), v.end());
    double s = 0;
    for (double z : v) s += std::exp(z - top);
    return top + std::log(s);
}

void write_le(std::ostream& out, std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t read_le(std::istream& in, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) {
        const int c = in.get();
        if (c == EOF) throw FormatError("truncated checkpoint");
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return v;
}

} // namespace

std::string to_string(Architecture arch) { return arch == Architecture::mlp ? "mlp" : "convnet"; }

Architecture parse_architecture(const std::string& name) {
    if (name == "mlp") return Architecture::mlp;
    if (name == "convnet") return Architecture::convnet;
    throw ParameterError("unknown architecture '" + name + "' (expected mlp or convnet)");
}

ParamLayout Model::layout(Architecture arch, std::size_t height, std::size_t width,
                          int class_count) {
    if (class_count < 2) throw ParameterError("a classifier needs at least two classes");
    const auto C = static_cast<std::size_t>(class_count);
    ParamLayout L;
    std::size_t first_block = 0;
    if (arch == Architecture::mlp) {
        L.hidden = kMlpHidden;
        first_block = kMlpHidden * height * width;
        L.b1 = first_block;
        L.w2 = L.b1 + kMlpHidden;
    } else {
        if (height < kConvKernel + 1 || width < kConvKernel + 1)
            throw DimensionError("convnet input must be at least 6x6");
        L.conv_rows = height - kConvKernel + 1;
        L.conv_cols = width - kConvKernel + 1;
        L.pool_rows = L.conv_rows / 2;
        L.pool_cols = L.conv_cols / 2;
        L.hidden = kConvChannels * L.pool_rows * L.pool_cols;
        first_block = kConvChannels * kConvKernel * kConvKernel;
        L.b1 = first_block;
        L.w2 = L.b1 + kConvChannels;
    }
    L.b2 = L.w2 + C * L.hidden;
    L.total = L.b2 + C;
    return L;
}

Model::Model(Architecture arch, std::size_t height, std::size_t width, int class_count,
             std::vector<double> params)
    : arch_(arch), height_(height), width_(width), classes_(class_count),
      layout_(layout(arch, height, width, class_count)), params_(std::move(params)) {
    if (params_.size() != layout_.total)
        throw DimensionError("parameter vector has " + std::to_string(params_.size()) +
                             " entries, layout needs " + std::to_string(layout_.total));
    if (!std::all_of(params_.begin(), params_.end(), [](double v) { return std::isfinite(v); }))
        throw NumericError("model parameters must be finite");
}

Model Model::zeros(Architecture arch, std::size_t height, std::size_t width, int class_count) {
    return Model(arch, height, width, class_count,
                 std::vector<double>(layout(arch, height, width, class_count).total, 0.0));
}

Model Model::random(Architecture arch, std::size_t height, std::size_t width, int class_count,
                    Rng& rng) {
    const auto L = layout(arch, height, width, class_count);
    std::vector<double> p(L.total);
    const double fan_in1 = arch == Architecture::mlp ? static_cast<double>(height * width)
                                                     : static_cast<double>(kConvKernel * kConvKernel);
    const double fan_in2 = static_cast<double>(L.hidden);
    const double s1 = 1.0 / std::sqrt(fan_in1), s2 = 1.0 / std::sqrt(fan_in2);
    for (std::size_t i = 0; i < L.w2; ++i) p[i] = rng.uniform(-s1, s1);
    for (std::size_t i = L.w2; i < L.total; ++i) p[i] = rng.uniform(-s2, s2);
    return Model(arch, height, width, class_count, std::move(p));
}

std::vector<double> forward_logits(const Model& m, const Image& x) { return forward(m, x).logits; }

double cross_entropy_from_logits(const std::vector<double>& logits, int label) {
    return log_sum_exp(logits) - logits[static_cast<std::size_t>(label)];
}

double cross_entropy_loss(const Model& m, const Image& x, int label) {
    check_label(m, label);
    return cross_entropy_from_logits(forward_logits(m, x), label);
}

int argmax(const std::vector<double>& logits) {
    return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

int predict(const Model& m, const Image& x) { return argmax(forward_logits(m, x)); }

double logit_margin(const std::vector<double>& logits, int label) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < logits.size(); ++i)
        if (static_cast<int>(i) != label) best = std::max(best, logits[i]);
    return best - logits[static_cast<std::size_t>(label)];
}

LossGradient loss_and_gradients(const Model& m, const Image& x, int label, bool want_input,
                                bool want_params) {
    check_label(m, label);
    Trace t = forward(m, x);
    const auto& L = m.layout();
    const double* p = m.params().data();
    const auto C = static_cast<std::size_t>(m.class_count());

    LossGradient out;
    const double lse = log_sum_exp(t.logits);
    out.loss = lse - t.logits[static_cast<std::size_t>(label)];
    out.logits = t.logits;
    std::vector<double> d_logits(C);
    for (std::size_t k = 0; k < C; ++k) d_logits[k] = std::exp(t.logits[k] - lse);
    d_logits[static_cast<std::size_t>(label)] -= 1.0;

    if (want_params) out.param_grad.assign(L.total, 0.0);
    std::vector<double> d_hidden(L.hidden, 0.0);
    for (std::size_t k = 0; k < C; ++k) {
        const double* w = p + L.w2 + k * L.hidden;
        for (std::size_t h = 0; h < L.hidden; ++h) d_hidden[h] += w[h] * d_logits[k];
        if (want_params) {
            double* gw = out.param_grad.data() + L.w2 + k * L.hidden;
            for (std::size_t h = 0; h < L.hidden; ++h) gw[h] = d_logits[k] * t.hidden[h];
            out.param_grad[L.b2 + k] = d_logits[k];
        }
    }
    if (want_input) out.input_grad.assign(x.size(), 0.0);

    if (m.architecture() == Architecture::mlp) {
        const std::size_t n = x.size();
        for (std::size_t h = 0; h < L.hidden; ++h) {
            const double d_pre = d_hidden[h] * (1.0 - t.hidden[h] * t.hidden[h]);
            if (d_pre == 0.0) continue;
            const double* w = p + L.w1 + h * n;
            if (want_input)
                for (std::size_t i = 0; i < n; ++i) out.input_grad[i] += w[i] * d_pre;
            if (want_params) {
                double* gw = out.param_grad.data() + L.w1 + h * n;
                for (std::size_t i = 0; i < n; ++i) gw[i] = d_pre * x[i];
                out.param_grad[L.b1 + h] = d_pre;
            }
        }
        return out;
    }

    const std::size_t rows = L.conv_rows, cols = L.conv_cols, width = x.width();
    std::vector<double> d_pre(t.conv_act.size(), 0.0);
    for (std::size_t f = 0; f < L.hidden; ++f) {
        const std::size_t src = t.pool_src[f];
        d_pre[src] += d_hidden[f] * (1.0 - t.conv_act[src] * t.conv_act[src]);
    }
    for (std::size_t ch = 0; ch < kConvChannels; ++ch) {
        const double* k = p + L.w1 + ch * kConvKernel * kConvKernel;
        double* gk = want_params ? out.param_grad.data() + L.w1 + ch * kConvKernel * kConvKernel
                                 : nullptr;
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) {
                const double d = d_pre[(ch * rows + r) * cols + c];
                if (d == 0.0) continue;
                if (want_params) out.param_grad[L.b1 + ch] += d;
                for (std::size_t i = 0; i < kConvKernel; ++i)
                    for (std::size_t j = 0; j < kConvKernel; ++j) {
                        const std::size_t px = (r + i) * width + c + j;
                        if (want_params) gk[i * kConvKernel + j] += d * x[px];
                        if (want_input) out.input_grad[px] += d * k[i * kConvKernel + j];
                    }
            }
    }
    return out;
}

std::vector<double> input_gradient(const Model& m, const Image& x, int label) {
    return loss_and_gradients(m, x, label, true, false).input_grad;
}

std::vector<double> param_gradient(const Model& m, const Image& x, int label) {
    return loss_and_gradients(m, x, label, false, true).param_grad;
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0) || !std::isfinite(learning_rate))
        throw ParameterError("learning rate must be positive");
    if (epochs < 0) throw ParameterError("epochs must be non-negative");
    if (batch_size == 0) throw ParameterError("batch size must be positive");
}

Model sgd_train(Model model, const Dataset& d, const TrainConfig& cfg,
                std::vector<double>* epoch_loss) {
    cfg.validate();
    if (d.empty()) throw ParameterError("cannot train on an empty dataset");
    d.check();
    Rng shuffle_rng = Rng::stream(cfg.seed, 1);
    std::vector<std::size_t> order(d.size());
    std::vector<double> grad(model.params().size());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.below(i)]);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            std::fill(grad.begin(), grad.end(), 0.0);
            for (std::size_t b = start; b < stop; ++b) {
                const auto& ex = d.examples[order[b]];
                const auto g = loss_and_gradients(model, ex.image, ex.label, false, true);
                for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g.param_grad[i];
            }
            const double step = cfg.learning_rate / static_cast<double>(stop - start);
            auto& p = model.mutable_params();
            for (std::size_t i = 0; i < p.size(); ++i) p[i] -= step * grad[i];
        }
        if (epoch_loss != nullptr) epoch_loss->push_back(mean_loss(model, d));
    }
    if (!std::all_of(model.params().begin(), model.params().end(),
                     [](double v) { return std::isfinite(v); }))
        throw NumericError("training produced non-finite parameters");
    return model;
}

Model initial_model(Architecture arch, const Dataset& d, std::uint64_t seed) {
    if (d.empty()) throw ParameterError("cannot train on an empty dataset");
    Rng init_rng = Rng::stream(seed, 0);
    const auto& x = d.examples.front().image;
    return Model::random(arch, x.height(), x.width(), d.class_count, init_rng);
}

Model train_baseline(Architecture arch, const Dataset& d, const TrainConfig& cfg,
                     std::vector<double>* epoch_loss) {
    return sgd_train(initial_model(arch, d, cfg.seed), d, cfg, epoch_loss);
}

double accuracy(const Model& m, const Dataset& d) {
    if (d.empty()) throw ParameterError("accuracy of an empty dataset is undefined");
    std::size_t correct = 0;
    for (const auto& ex : d.examples) correct += predict(m, ex.image) == ex.label;
    return static_cast<double>(correct) / static_cast<double>(d.size());
}

double mean_loss(const Model& m, const Dataset& d) {
    if (d.empty()) throw ParameterError("mean loss of an empty dataset is undefined");
    double total = 0;
    for (const auto& ex : d.examples) total += cross_entropy_loss(m, ex.image, ex.label);
    return total / static_cast<double>(d.size());
}

void save_checkpoint(const Model& m, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    write_le(out, kCheckpointVersion, 4);
    write_le(out, m.architecture() == Architecture::mlp ? 0 : 1, 4);
    write_le(out, m.input_height(), 4);
    write_le(out, m.input_width(), 4);
    write_le(out, static_cast<std::uint64_t>(m.class_count()), 4);
    write_le(out, m.params().size(), 8);
    for (double v : m.params()) write_le(out, std::bit_cast<std::uint64_t>(v), 8);
    if (!out) throw IoError("failed writing " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    char magic[8];
    if (!in.read(magic, 8) || !std::equal(magic, magic + 8, kCheckpointMagic))
        throw FormatError("not a checkpoint: " + path.string());
    if (read_le(in, 4) != kCheckpointVersion) throw FormatError("unsupported checkpoint version");
    const auto tag = read_le(in, 4);
    if (tag > 1) throw FormatError("unknown architecture tag " + std::to_string(tag));
    const auto height = static_cast<std::size_t>(read_le(in, 4));
    const auto width = static_cast<std::size_t>(read_le(in, 4));
    const auto classes = static_cast<int>(read_le(in, 4));
    const auto count = read_le(in, 8);
    const auto arch = tag == 0 ? Architecture::mlp : Architecture::convnet;
    if (count != Model::layout(arch, height, width, classes).total)
        throw FormatError("checkpoint parameter count does not match its architecture");
    std::vector<double> p(count);
    for (auto& v : p) v = std::bit_cast<double>(read_le(in, 8));
    return Model(arch, height, width, classes, std::move(p));
}

} // namespace pdro
