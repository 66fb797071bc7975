#pragma once

// Frequency-shared narrow-band separator: two bidirectional LSTM layers and
// a time-distributed linear output layer, with back-propagation through time.
//
// Every frequency of every utterance is one sequence in the batch; a single
// parameter set processes all of them. Internally a batch is laid out as a
// [features x (T * B)] column-major matrix, column t*B + b holding item b at
// frame t, so each recurrence step is one GEMM over the whole batch.

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "nbss/types.hpp"

namespace nbss {

struct ModelShape {
    std::size_t input = 16;    // 2M
    std::size_t hidden1 = 256; // per direction
    std::size_t hidden2 = 128; // per direction
    std::size_t output = 4;    // 2N

    bool operator==(const ModelShape&) const = default;
};

// Dense [n0][n1][n2] tensor, last index fastest.
template <class Scalar>
struct Tensor3 {
    std::size_t n0 = 0, n1 = 0, n2 = 0;
    std::vector<Scalar> data;

    Tensor3() = default;
    Tensor3(std::size_t a, std::size_t b, std::size_t c) : n0(a), n1(b), n2(c), data(a * b * c, Scalar(0)) {}

    Scalar& operator()(std::size_t i, std::size_t j, std::size_t k) { return data[(i * n1 + j) * n2 + k]; }
    Scalar operator()(std::size_t i, std::size_t j, std::size_t k) const { return data[(i * n1 + j) * n2 + k]; }
};

struct LstmBlockLayout {
    std::size_t w_ih = 0, w_hh = 0, bias = 0;
    std::size_t in = 0, hidden = 0;
};

// Offsets of every parameter group in the flat parameter vector.
struct ParamLayout {
    std::array<std::array<LstmBlockLayout, 2>, 2> lstm{};  // [layer][direction]
    std::size_t fc_w = 0, fc_b = 0;
    std::size_t fc_in = 0, fc_out = 0;
    std::size_t total = 0;

    explicit ParamLayout(const ModelShape& s) {
        std::size_t off = 0;
        const std::array<std::size_t, 2> ins{s.input, 2 * s.hidden1};
        const std::array<std::size_t, 2> hid{s.hidden1, s.hidden2};
        for (int l = 0; l < 2; ++l)
            for (int d = 0; d < 2; ++d) {
                auto& b = lstm[l][d];
                b.in = ins[l];
                b.hidden = hid[l];
                b.w_ih = off;
                off += 4 * hid[l] * ins[l];
                b.w_hh = off;
                off += 4 * hid[l] * hid[l];
                b.bias = off;
                off += 4 * hid[l];
            }
        fc_in = 2 * s.hidden2;
        fc_out = s.output;
        fc_w = off;
        off += fc_out * fc_in;
        fc_b = off;
        off += fc_out;
        total = off;
    }
};

template <class Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using MatMap = Eigen::Map<Mat<Scalar>>;
template <class Scalar>
using ConstMatMap = Eigen::Map<const Mat<Scalar>>;

// Storage with Eigen's maximal alignment. The weight maps then start at the
// same alignment in every run, which keeps vectorized sums (and so training)
// bit-reproducible.
template <class Scalar>
using AlignedVector = std::vector<Scalar, Eigen::aligned_allocator<Scalar>>;

// All weights in one flat vector. Gate order inside each 4H block is
// (input, forget, cell candidate, output).
template <class Scalar>
struct ModelParams {
    ModelShape shape;
    AlignedVector<Scalar> flat;

    ModelParams() : ModelParams(ModelShape{}) {}
    explicit ModelParams(const ModelShape& s) : shape(s), flat(ParamLayout(s).total, Scalar(0)) {}

    ParamLayout layout() const { return ParamLayout(shape); }
    std::size_t size() const { return flat.size(); }

    ConstMatMap<Scalar> w_ih(int l, int d) const {
        const auto b = layout().lstm[l][d];
        return ConstMatMap<Scalar>(flat.data() + b.w_ih, Eigen::Index(4 * b.hidden), Eigen::Index(b.in));
    }
    ConstMatMap<Scalar> w_hh(int l, int d) const {
        const auto b = layout().lstm[l][d];
        return ConstMatMap<Scalar>(flat.data() + b.w_hh, Eigen::Index(4 * b.hidden), Eigen::Index(b.hidden));
    }
    ConstMatMap<Scalar> bias(int l, int d) const {
        const auto b = layout().lstm[l][d];
        return ConstMatMap<Scalar>(flat.data() + b.bias, Eigen::Index(4 * b.hidden), 1);
    }
    ConstMatMap<Scalar> fc_w() const {
        const ParamLayout p = layout();
        return ConstMatMap<Scalar>(flat.data() + p.fc_w, Eigen::Index(p.fc_out), Eigen::Index(p.fc_in));
    }
    ConstMatMap<Scalar> fc_b() const {
        const ParamLayout p = layout();
        return ConstMatMap<Scalar>(flat.data() + p.fc_b, Eigen::Index(p.fc_out), 1);
    }

    MatMap<Scalar> w_ih(int l, int d) {
        const auto b = layout().lstm[l][d];
        return MatMap<Scalar>(flat.data() + b.w_ih, Eigen::Index(4 * b.hidden), Eigen::Index(b.in));
    }
    MatMap<Scalar> w_hh(int l, int d) {
        const auto b = layout().lstm[l][d];
        return MatMap<Scalar>(flat.data() + b.w_hh, Eigen::Index(4 * b.hidden), Eigen::Index(b.hidden));
    }
    MatMap<Scalar> bias(int l, int d) {
        const auto b = layout().lstm[l][d];
        return MatMap<Scalar>(flat.data() + b.bias, Eigen::Index(4 * b.hidden), 1);
    }
    MatMap<Scalar> fc_w() {
        const ParamLayout p = layout();
        return MatMap<Scalar>(flat.data() + p.fc_w, Eigen::Index(p.fc_out), Eigen::Index(p.fc_in));
    }
    MatMap<Scalar> fc_b() {
        const ParamLayout p = layout();
        return MatMap<Scalar>(flat.data() + p.fc_b, Eigen::Index(p.fc_out), 1);
    }

    template <class Other>
    ModelParams<Other> cast() const {
        ModelParams<Other> out(shape);
        for (std::size_t i = 0; i < flat.size(); ++i) out.flat[i] = Other(flat[i]);
        return out;
    }

    bool all_finite() const {
        for (Scalar v : flat)
            if (!std::isfinite(double(v))) return false;
        return true;
    }
};

// LSTM weights ~ U(-1/sqrt(H), 1/sqrt(H)) with H the layer's hidden size;
// the output layer uses its fan-in. Forget-gate bias 1, other biases 0.
template <class Scalar>
ModelParams<Scalar> init_params(std::uint64_t seed, const ModelShape& shape = {}) {
    ModelParams<Scalar> p(shape);
    const ParamLayout lay = p.layout();
    std::mt19937_64 rng(seed);
    auto fill = [&](std::size_t off, std::size_t count, double bound) {
        std::uniform_real_distribution<double> u(-bound, bound);
        for (std::size_t i = 0; i < count; ++i) p.flat[off + i] = Scalar(u(rng));
    };
    for (int l = 0; l < 2; ++l)
        for (int d = 0; d < 2; ++d) {
            const auto& b = lay.lstm[l][d];
            const double bound = 1.0 / std::sqrt(double(b.hidden));
            fill(b.w_ih, 4 * b.hidden * b.in, bound);
            fill(b.w_hh, 4 * b.hidden * b.hidden, bound);
            for (std::size_t k = 0; k < 4 * b.hidden; ++k)
                p.flat[b.bias + k] = (k >= b.hidden && k < 2 * b.hidden) ? Scalar(1) : Scalar(0);
        }
    fill(lay.fc_w, lay.fc_out * lay.fc_in, 1.0 / std::sqrt(double(lay.fc_in)));
    for (std::size_t k = 0; k < lay.fc_out; ++k) p.flat[lay.fc_b + k] = Scalar(0);
    return p;
}

template <class Scalar>
struct DirectionTrace {
    Mat<Scalar> gates;      // 4H x TB, post-activation (i, f, g, o)
    Mat<Scalar> cell;       // H x TB
    Mat<Scalar> tanh_cell;  // H x TB
};

template <class Scalar>
struct LayerTrace {
    Mat<Scalar> input;   // I x TB
    std::array<DirectionTrace<Scalar>, 2> dir;
    Mat<Scalar> output;  // 2H x TB, forward rows then backward rows
};

template <class Scalar>
struct ForwardTrace {
    ModelShape shape;
    std::size_t batch = 0;
    std::size_t frames = 0;
    std::array<LayerTrace<Scalar>, 2> layers;
};

namespace detail {

template <class Scalar>
inline Scalar sigmoid(Scalar x) {
    return Scalar(1) / (Scalar(1) + std::exp(-x));
}

template <class Scalar>
void lstm_direction_forward(const ModelParams<Scalar>& p, int l, int d, const Mat<Scalar>& x, std::size_t B,
                            std::size_t T, DirectionTrace<Scalar>& tr, Mat<Scalar>& out) {
    const auto W_ih = p.w_ih(l, d);
    const auto W_hh = p.w_hh(l, d);
    const auto bias = p.bias(l, d);
    const Eigen::Index H = W_hh.cols();
    const Eigen::Index nb = Eigen::Index(B);

    tr.gates.noalias() = W_ih * x;
    tr.gates.colwise() += bias.col(0);
    tr.cell.resize(H, x.cols());
    tr.tanh_cell.resize(H, x.cols());

    Mat<Scalar> h_prev = Mat<Scalar>::Zero(H, nb);
    Mat<Scalar> c_prev = Mat<Scalar>::Zero(H, nb);
    for (std::size_t s = 0; s < T; ++s) {
        const std::size_t t = d == 0 ? s : T - 1 - s;
        const Eigen::Index col = Eigen::Index(t * B);
        auto g = tr.gates.middleCols(col, nb);
        g.noalias() += W_hh * h_prev;
        g.topRows(2 * H) = g.topRows(2 * H).unaryExpr([](Scalar v) { return sigmoid(v); });
        g.middleRows(2 * H, H) = g.middleRows(2 * H, H).array().tanh();
        g.bottomRows(H) = g.bottomRows(H).unaryExpr([](Scalar v) { return sigmoid(v); });

        auto c = tr.cell.middleCols(col, nb);
        c = g.middleRows(H, H).cwiseProduct(c_prev) + g.topRows(H).cwiseProduct(g.middleRows(2 * H, H));
        auto tc = tr.tanh_cell.middleCols(col, nb);
        tc = c.array().tanh();
        auto h = out.block(Eigen::Index(d) * H, col, H, nb);
        h = g.bottomRows(H).cwiseProduct(tc);
        h_prev = h;
        c_prev = c;
    }
}

template <class Scalar>
void lstm_direction_backward(const ModelParams<Scalar>& p, ModelParams<Scalar>& grad, int l, int d,
                             const LayerTrace<Scalar>& lt, const Mat<Scalar>& d_out, std::size_t B, std::size_t T,
                             Mat<Scalar>& d_input) {
    const auto& tr = lt.dir[d];
    const auto W_ih = p.w_ih(l, d);
    const auto W_hh = p.w_hh(l, d);
    const Eigen::Index H = W_hh.cols();
    const Eigen::Index nb = Eigen::Index(B);
    const Eigen::Index TB = tr.gates.cols();

    Mat<Scalar> d_pre(4 * H, TB);
    Mat<Scalar> h_prev_all = Mat<Scalar>::Zero(H, TB);
    Mat<Scalar> dh_next = Mat<Scalar>::Zero(H, nb);
    Mat<Scalar> dc_next = Mat<Scalar>::Zero(H, nb);
    Mat<Scalar> dh(H, nb), dc(H, nb);

    for (std::size_t s = T; s-- > 0;) {
        const std::size_t t = d == 0 ? s : T - 1 - s;
        const Eigen::Index col = Eigen::Index(t * B);
        const bool has_prev = s > 0;
        const Eigen::Index prev_col = has_prev ? Eigen::Index((d == 0 ? t - 1 : t + 1) * B) : 0;

        const auto g = tr.gates.middleCols(col, nb);
        const auto i_g = g.topRows(H).array();
        const auto f_g = g.middleRows(H, H).array();
        const auto c_g = g.middleRows(2 * H, H).array();
        const auto o_g = g.bottomRows(H).array();
        const auto tc = tr.tanh_cell.middleCols(col, nb).array();

        dh = d_out.block(Eigen::Index(d) * H, col, H, nb) + dh_next;
        dc.array() = dh.array() * o_g * (Scalar(1) - tc * tc) + dc_next.array();

        auto dp = d_pre.middleCols(col, nb);
        dp.topRows(H).array() = dc.array() * c_g * i_g * (Scalar(1) - i_g);
        if (has_prev) {
            const auto c_prev = tr.cell.middleCols(prev_col, nb).array();
            dp.middleRows(H, H).array() = dc.array() * c_prev * f_g * (Scalar(1) - f_g);
            h_prev_all.middleCols(col, nb) = lt.output.block(Eigen::Index(d) * H, prev_col, H, nb);
        } else {
            dp.middleRows(H, H).setZero();
        }
        dp.middleRows(2 * H, H).array() = dc.array() * i_g * (Scalar(1) - c_g * c_g);
        dp.bottomRows(H).array() = dh.array() * tc * o_g * (Scalar(1) - o_g);

        dc_next.array() = dc.array() * f_g;
        dh_next.noalias() = W_hh.transpose() * dp;
    }

    grad.w_ih(l, d).noalias() += d_pre * lt.input.transpose();
    grad.w_hh(l, d).noalias() += d_pre * h_prev_all.transpose();
    grad.bias(l, d).col(0) += d_pre.rowwise().sum();
    d_input.noalias() += W_ih.transpose() * d_pre;
}

template <class Scalar>
Mat<Scalar> to_columns(const Tensor3<Scalar>& x) {
    const std::size_t B = x.n0, C = x.n1, T = x.n2;
    Mat<Scalar> m(Eigen::Index(C), Eigen::Index(T * B));
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t t = 0; t < T; ++t) m(Eigen::Index(c), Eigen::Index(t * B + b)) = x(b, c, t);
    return m;
}

template <class Scalar>
Tensor3<Scalar> from_columns(const Mat<Scalar>& m, std::size_t B, std::size_t T) {
    const std::size_t C = std::size_t(m.rows());
    Tensor3<Scalar> x(B, C, T);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c) x(b, c, t) = m(Eigen::Index(c), Eigen::Index(t * B + b));
    return x;
}

}  // namespace detail

template <class Scalar>
struct ForwardResult {
    Tensor3<Scalar> outputs;  // [B][output][T]
    ForwardTrace<Scalar> trace;
};

template <class Scalar>
ForwardResult<Scalar> forward(const ModelParams<Scalar>& p, const Tensor3<Scalar>& batch) {
    if (batch.n1 != p.shape.input) throw Error("input width does not match the model");
    if (batch.n0 == 0 || batch.n2 == 0) throw Error("empty batch");
    for (Scalar v : batch.data)
        if (!std::isfinite(double(v))) throw Error("non-finite value in model input");

    const std::size_t B = batch.n0, T = batch.n2;
    ForwardResult<Scalar> r;
    auto& tr = r.trace;
    tr.shape = p.shape;
    tr.batch = B;
    tr.frames = T;

    tr.layers[0].input = detail::to_columns(batch);
    for (int l = 0; l < 2; ++l) {
        auto& lt = tr.layers[l];
        if (l == 1) lt.input = tr.layers[0].output;
        const std::size_t H = l == 0 ? p.shape.hidden1 : p.shape.hidden2;
        lt.output.resize(Eigen::Index(2 * H), lt.input.cols());
        for (int d = 0; d < 2; ++d) detail::lstm_direction_forward(p, l, d, lt.input, B, T, lt.dir[d], lt.output);
    }
    Mat<Scalar> y = p.fc_w() * tr.layers[1].output;
    y.colwise() += p.fc_b().col(0);
    r.outputs = detail::from_columns(y, B, T);
    return r;
}

template <class Scalar>
struct BackwardResult {
    ModelParams<Scalar> grad;
    Tensor3<Scalar> grad_inputs;
};

template <class Scalar>
BackwardResult<Scalar> backward(const ModelParams<Scalar>& p, const ForwardTrace<Scalar>& tr,
                                const Tensor3<Scalar>& grad_outputs) {
    if (!(tr.shape == p.shape)) throw Error("trace was produced by a model of a different shape");
    if (grad_outputs.n0 != tr.batch || grad_outputs.n1 != p.shape.output || grad_outputs.n2 != tr.frames)
        throw Error("grad_outputs shape does not match the forward trace");
    const std::size_t B = tr.batch, T = tr.frames;

    BackwardResult<Scalar> r{ModelParams<Scalar>(p.shape), {}};
    const Mat<Scalar> dy = detail::to_columns(grad_outputs);
    r.grad.fc_w().noalias() = dy * tr.layers[1].output.transpose();
    r.grad.fc_b().col(0) = dy.rowwise().sum();
    Mat<Scalar> d_out = p.fc_w().transpose() * dy;

    for (int l = 1; l >= 0; --l) {
        const auto& lt = tr.layers[l];
        Mat<Scalar> d_in = Mat<Scalar>::Zero(lt.input.rows(), lt.input.cols());
        for (int d = 0; d < 2; ++d) detail::lstm_direction_backward(p, r.grad, l, d, lt, d_out, B, T, d_in);
        d_out = std::move(d_in);
    }
    r.grad_inputs = detail::from_columns(d_out, B, T);
    return r;
}

}  // namespace nbss
