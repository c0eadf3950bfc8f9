#include "rosdhb/problems.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace rosdhb {

double Objective::honest_avg_loss(const Vector& theta) const {
    double s = 0.0;
    for (int i = 0; i < num_workers(); ++i) s += worker_loss(i, theta);
    return s / num_workers();
}

Vector Objective::honest_avg_gradient(const Vector& theta) const {
    Vector g = Vector::Zero(dim());
    for (int i = 0; i < num_workers(); ++i) g += full_gradient(i, theta);
    return g / num_workers();
}

namespace {

class QuadraticObjective final : public Objective {
  public:
    QuadraticObjective(Vector h, std::vector<Vector> centers, std::vector<double> scales,
                       ObjectiveInfo info)
        : h_(std::move(h)), centers_(std::move(centers)), scales_(std::move(scales)),
          info_(info) {}

    int dim() const override { return static_cast<int>(h_.size()); }
    int num_workers() const override { return static_cast<int>(centers_.size()); }

    double worker_loss(int i, const Vector& theta) const override {
        Vector r = theta - centers_[i];
        return 0.5 * scales_[i] * (r.array().square() * h_.array()).sum();
    }

    Vector full_gradient(int i, const Vector& theta) const override {
        return scales_[i] * (h_.array() * (theta - centers_[i]).array()).matrix();
    }

    Vector stochastic_gradient(int i, const Vector& theta, int /*batch*/,
                               RngStream& /*rng*/) const override {
        // Quadratic workers hold no sample data; the exact gradient is the
        // only unbiased oracle.
        return full_gradient(i, theta);
    }

    ObjectiveInfo info() const override { return info_; }

  private:
    Vector h_; // shared diagonal Hessian
    std::vector<Vector> centers_;
    std::vector<double> scales_; // 1 + s_i, all 1 for the shifted kind
    ObjectiveInfo info_;
};

} // namespace

std::shared_ptr<Objective> make_quadratic(const QuadraticFamilySpec& spec, RngStream rng) {
    if (spec.base_curvature <= 0.0)
        throw ConfigError("make_quadratic: base_curvature must be positive");
    if (spec.d < 1 || spec.n < 1) throw ConfigError("make_quadratic: d and n must be positive");
    if (spec.spread_g < 0.0 || spec.spread_b < 0.0)
        throw ConfigError("make_quadratic: spreads must be nonnegative");
    if (spec.kind == QuadraticKind::Scaled && spec.spread_b >= 0.9)
        throw ConfigError("make_quadratic: spread_b must be < 0.9 to keep curvatures positive");

    // Diagonal H linearly spaced so that L = max eigenvalue = base_curvature.
    Vector h(spec.d);
    for (int l = 0; l < spec.d; ++l)
        h[l] = spec.base_curvature *
               (spec.d == 1 ? 1.0 : 0.1 + 0.9 * static_cast<double>(l) / (spec.d - 1));

    // Mean-zero center offsets, rescaled so the analytic G exactly matches
    // spread_g: G^2 = (1/n) sum ||H (c_i - c_bar)||^2.
    RngStream cr = rng.derive("centers");
    std::vector<Vector> centers(spec.n, Vector::Zero(spec.d));
    if (spec.spread_g > 0.0 && spec.n > 1) {
        Vector mean_c = Vector::Zero(spec.d);
        for (auto& c : centers) {
            c.resize(spec.d);
            for (int l = 0; l < spec.d; ++l) c[l] = cr.normal();
            mean_c += c;
        }
        mean_c /= spec.n;
        double g2 = 0.0;
        for (auto& c : centers) {
            c -= mean_c;
            g2 += (h.array() * c.array()).matrix().squaredNorm();
        }
        g2 /= spec.n;
        double scale = spec.spread_g / std::sqrt(g2);
        for (auto& c : centers) c *= scale;
    }

    std::vector<double> scales(spec.n, 1.0);
    if (spec.kind == QuadraticKind::Scaled && spec.spread_b > 0.0 && spec.n > 1) {
        RngStream sr = rng.derive("scales");
        std::vector<double> s(spec.n);
        double mean_s = 0.0;
        for (auto& v : s) {
            v = sr.normal();
            mean_s += v;
        }
        mean_s /= spec.n;
        double ms = 0.0;
        for (auto& v : s) {
            v -= mean_s;
            ms += v * v;
        }
        double norm = std::sqrt(ms / spec.n);
        double cap = 0.0;
        for (int i = 0; i < spec.n; ++i) {
            s[i] *= spec.spread_b / norm;
            cap = std::max(cap, std::abs(s[i]));
        }
        if (cap >= 0.95)
            for (auto& v : s) v *= 0.9 / cap; // keep all curvatures positive
        for (int i = 0; i < spec.n; ++i) scales[i] = 1.0 + s[i];
    }

    ObjectiveInfo info;
    info.L = spec.base_curvature; // sum of scales is n, so the avg Hessian is H
    if (spec.kind == QuadraticKind::Shifted) {
        info.G = spec.spread_g;
        info.B = 0.0;
    } else if (spec.spread_g == 0.0) {
        // Shared minimizer at 0: spread is exactly B^2 ||grad L_H||^2.
        double b2 = 0.0;
        for (double sc : scales) b2 += (sc - 1.0) * (sc - 1.0);
        info.G = 0.0;
        info.B = std::sqrt(b2 / spec.n);
    }
    return std::make_shared<QuadraticObjective>(std::move(h), std::move(centers),
                                                std::move(scales), info);
}

DissimilarityEstimate estimate_dissimilarity(const Objective& obj,
                                             const std::vector<Vector>& thetas) {
    if (thetas.size() < 2) throw ConfigError("estimate_dissimilarity: need >= 2 probe points");
    int n = obj.num_workers();
    std::vector<double> u(thetas.size()), v(thetas.size());
    for (size_t j = 0; j < thetas.size(); ++j) {
        Vector gh = obj.honest_avg_gradient(thetas[j]);
        u[j] = gh.squaredNorm();
        double spread = 0.0;
        for (int i = 0; i < n; ++i) spread += (obj.full_gradient(i, thetas[j]) - gh).squaredNorm();
        v[j] = spread / n;
    }

    DissimilarityEstimate est;
    double umin = *std::min_element(u.begin(), u.end());
    double umax = *std::max_element(u.begin(), u.end());
    auto m = static_cast<double>(u.size());

    auto residual = [&](double g2, double b2) {
        double r = 0.0;
        for (size_t j = 0; j < u.size(); ++j) {
            double e = v[j] - g2 - b2 * u[j];
            r += e * e;
        }
        return r;
    };

    if (umax - umin < 1e-12 * (1.0 + umax)) {
        est.degenerate = true;
        est.B_hat = 0.0;
        double g2 = std::max(0.0, std::accumulate(v.begin(), v.end(), 0.0) / m);
        est.G_hat = std::sqrt(g2);
        est.residual = residual(g2, 0.0);
        return est;
    }

    // Unconstrained least squares for v = g2 + b2*u, then clamp to the
    // nonnegative quadrant via the active-set candidates.
    double su = 0.0, sv = 0.0, suu = 0.0, suv = 0.0;
    for (size_t j = 0; j < u.size(); ++j) {
        su += u[j];
        sv += v[j];
        suu += u[j] * u[j];
        suv += u[j] * v[j];
    }
    double det = m * suu - su * su;
    double b2 = (m * suv - su * sv) / det;
    double g2 = (sv - b2 * su) / m;

    if (g2 < 0.0 || b2 < 0.0) {
        double g2a = std::max(0.0, sv / m);                   // B = 0
        double b2b = std::max(0.0, suu > 0 ? suv / suu : 0.); // G = 0
        if (residual(g2a, 0.0) <= residual(0.0, b2b)) {
            g2 = g2a;
            b2 = 0.0;
        } else {
            g2 = 0.0;
            b2 = b2b;
        }
    }
    est.G_hat = std::sqrt(g2);
    est.B_hat = std::sqrt(b2);
    est.residual = residual(g2, b2);
    return est;
}

double estimate_smoothness(const Objective& obj, RngStream rng, int probes) {
    if (probes < 1) throw ConfigError("estimate_smoothness: probes must be >= 1");
    int d = obj.dim();
    double best = 0.0;
    for (int p = 0; p < probes; ++p) {
        RngStream r = rng.derive("smooth-" + std::to_string(p));
        Vector theta(d);
        for (int l = 0; l < d; ++l) theta[l] = r.normal();
        Vector dir;
        if (p < d) {
            dir = Vector::Zero(d);
            dir[p] = 1.0; // sweep coordinate axes first (hits diagonal eigendirections)
        } else {
            dir.resize(d);
            for (int l = 0; l < d; ++l) dir[l] = r.normal();
            dir.normalize();
        }
        double step = 0.5;
        Vector theta2 = theta + step * dir;
        double num = (obj.honest_avg_gradient(theta) - obj.honest_avg_gradient(theta2)).norm();
        best = std::max(best, num / step);
    }
    return best;
}

// ---------------------------------------------------------------------------
// MNIST IDX parsing

namespace {

std::uint32_t read_be32(std::ifstream& f, const std::string& path, std::size_t offset) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (!f)
        throw ParseError(path + ": truncated at byte offset " + std::to_string(offset));
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
           std::uint32_t(b[3]);
}

void load_idx_pair(const std::string& images_path, const std::string& labels_path, Matrix* images,
                   std::vector<int>* labels) {
    std::ifstream fi(images_path, std::ios::binary);
    if (!fi) throw ParseError(images_path + ": cannot open");
    std::uint32_t magic = read_be32(fi, images_path, 0);
    if (magic != 0x00000803u)
        throw ParseError(images_path + ": expected image magic 0x00000803, got " +
                         std::to_string(magic) + " at byte offset 0");
    std::uint32_t count = read_be32(fi, images_path, 4);
    std::uint32_t rows = read_be32(fi, images_path, 8);
    std::uint32_t cols = read_be32(fi, images_path, 12);
    if (rows != 28 || cols != 28)
        throw ParseError(images_path + ": expected 28x28 images at byte offset 8");

    std::size_t pixels = std::size_t(count) * rows * cols;
    std::vector<unsigned char> buf(pixels);
    fi.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(pixels));
    if (!fi || static_cast<std::size_t>(fi.gcount()) != pixels)
        throw ParseError(images_path + ": truncated at byte offset " +
                         std::to_string(16 + fi.gcount()));

    std::ifstream fl(labels_path, std::ios::binary);
    if (!fl) throw ParseError(labels_path + ": cannot open");
    std::uint32_t lmagic = read_be32(fl, labels_path, 0);
    if (lmagic != 0x00000801u)
        throw ParseError(labels_path + ": expected label magic 0x00000801, got " +
                         std::to_string(lmagic) + " at byte offset 0");
    std::uint32_t lcount = read_be32(fl, labels_path, 4);
    if (lcount != count)
        throw ParseError(labels_path + ": label count " + std::to_string(lcount) +
                         " does not match image count " + std::to_string(count));
    std::vector<unsigned char> lbuf(lcount);
    fl.read(reinterpret_cast<char*>(lbuf.data()), static_cast<std::streamsize>(lcount));
    if (!fl || static_cast<std::size_t>(fl.gcount()) != lcount)
        throw ParseError(labels_path + ": truncated at byte offset " +
                         std::to_string(8 + fl.gcount()));

    images->resize(count, 784);
    labels->resize(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        for (int j = 0; j < 784; ++j)
            (*images)(i, j) = static_cast<double>(buf[std::size_t(i) * 784 + j]) / 255.0;
        int lab = lbuf[i];
        if (lab < 0 || lab > 9)
            throw ParseError(labels_path + ": label out of range at byte offset " +
                             std::to_string(8 + i));
        (*labels)[i] = lab;
    }
}

} // namespace

MnistDataset load_mnist_idx(const std::string& train_images_path,
                            const std::string& train_labels_path,
                            const std::string& test_images_path,
                            const std::string& test_labels_path) {
    MnistDataset data;
    load_idx_pair(train_images_path, train_labels_path, &data.train_images, &data.train_labels);
    load_idx_pair(test_images_path, test_labels_path, &data.test_images, &data.test_labels);
    return data;
}

// ---------------------------------------------------------------------------
// MLP

MlpModel::MlpModel(int hidden) : hidden_(hidden) {
    if (hidden < 1) throw ConfigError("MlpModel: hidden size must be positive");
}

int MlpModel::param_count() const { return 784 * hidden_ + hidden_ + hidden_ * 10 + 10; }

Vector MlpModel::init_theta(RngStream& rng) const {
    Vector theta = Vector::Zero(param_count());
    double s1 = 1.0 / std::sqrt(784.0), s2 = 1.0 / std::sqrt(static_cast<double>(hidden_));
    int o = 0;
    for (int i = 0; i < 784 * hidden_; ++i) theta[o++] = s1 * rng.normal();
    o += hidden_; // biases start at zero
    for (int i = 0; i < hidden_ * 10; ++i) theta[o++] = s2 * rng.normal();
    return theta;
}

namespace {

struct MlpViews {
    Eigen::Map<const Matrix> W1;
    Eigen::Map<const Vector> b1;
    Eigen::Map<const Matrix> W2;
    Eigen::Map<const Vector> b2;
};

MlpViews unpack(const Vector& theta, int h) {
    const double* p = theta.data();
    return {Eigen::Map<const Matrix>(p, 784, h), Eigen::Map<const Vector>(p + 784 * h, h),
            Eigen::Map<const Matrix>(p + 784 * h + h, h, 10),
            Eigen::Map<const Vector>(p + 784 * h + h + h * 10, 10)};
}

// Softmax rows in place, returns mean cross-entropy against labels.
double softmax_ce(Matrix& logits, const std::vector<int>& labels) {
    double loss = 0.0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        double mx = logits.row(i).maxCoeff();
        logits.row(i) = (logits.row(i).array() - mx).exp();
        double z = logits.row(i).sum();
        logits.row(i) /= z;
        loss -= std::log(std::max(logits(i, labels[i]), 1e-300));
    }
    return loss / static_cast<double>(logits.rows());
}

} // namespace

double MlpModel::loss_and_gradient(const Vector& theta, const Matrix& images,
                                   const std::vector<int>& labels, Vector* grad) const {
    if (theta.size() != param_count()) throw DimensionError("MlpModel: theta size mismatch");
    auto batch = images.rows();
    if (batch == 0 || static_cast<size_t>(batch) != labels.size())
        throw DimensionError("MlpModel: batch/labels mismatch");
    auto [W1, b1, W2, b2] = unpack(theta, hidden_);

    Matrix A1 = ((images * W1).rowwise() + b1.transpose()).array().tanh().matrix();
    Matrix P = (A1 * W2).rowwise() + b2.transpose();
    double loss = softmax_ce(P, labels);

    if (grad) {
        for (Eigen::Index i = 0; i < batch; ++i) P(i, labels[i]) -= 1.0;
        P /= static_cast<double>(batch);
        Matrix gW2 = A1.transpose() * P;
        Vector gb2 = P.colwise().sum().transpose();
        Matrix D1 = ((P * W2.transpose()).array() * (1.0 - A1.array().square())).matrix();
        Matrix gW1 = images.transpose() * D1;
        Vector gb1 = D1.colwise().sum().transpose();

        grad->resize(param_count());
        int h = hidden_;
        std::memcpy(grad->data(), gW1.data(), sizeof(double) * 784 * h);
        std::memcpy(grad->data() + 784 * h, gb1.data(), sizeof(double) * h);
        std::memcpy(grad->data() + 784 * h + h, gW2.data(), sizeof(double) * h * 10);
        std::memcpy(grad->data() + 784 * h + h + h * 10, gb2.data(), sizeof(double) * 10);
    }
    return loss;
}

double MlpModel::loss(const Vector& theta, const Matrix& images,
                      const std::vector<int>& labels) const {
    return loss_and_gradient(theta, images, labels, nullptr);
}

std::vector<int> MlpModel::predict(const Vector& theta, const Matrix& images) const {
    auto [W1, b1, W2, b2] = unpack(theta, hidden_);
    Matrix A1 = ((images * W1).rowwise() + b1.transpose()).array().tanh().matrix();
    Matrix P = (A1 * W2).rowwise() + b2.transpose();
    std::vector<int> out(P.rows());
    for (Eigen::Index i = 0; i < P.rows(); ++i) {
        int best = 0;
        for (int c = 1; c < 10; ++c)
            if (P(i, c) > P(i, best)) best = c; // strict: ties keep the lowest id
        out[i] = best;
    }
    return out;
}

double test_accuracy(const MlpModel& model, const Vector& theta, const MnistDataset& data) {
    auto pred = model.predict(theta, data.test_images);
    int correct = 0;
    for (size_t i = 0; i < pred.size(); ++i) correct += (pred[i] == data.test_labels[i]);
    return static_cast<double>(correct) / static_cast<double>(pred.size());
}

namespace {

class MnistObjective final : public Objective {
  public:
    MnistObjective(std::shared_ptr<const MnistDataset> data, int n_honest, RngStream rng,
                   int hidden)
        : data_(std::move(data)), model_(hidden), n_(n_honest) {
        if (n_ < 1) throw ConfigError("mnist_objective: n_honest must be positive");
        auto total = static_cast<int>(data_->train_images.rows());
        int per_shard = total / n_;
        if (per_shard < 1) throw ConfigError("mnist_objective: more workers than examples");
        int used = per_shard * n_;

        std::vector<int> perm(total);
        std::iota(perm.begin(), perm.end(), 0);
        RngStream pr = rng.derive("shard-permutation");
        for (int i = total - 1; i > 0; --i) {
            auto j = static_cast<int>(pr.uniform_int(static_cast<std::uint64_t>(i + 1)));
            std::swap(perm[i], perm[j]);
        }

        shards_images_.resize(n_);
        shards_labels_.resize(n_);
        for (int w = 0; w < n_; ++w) {
            shards_images_[w].resize(per_shard, 784);
            shards_labels_[w].resize(per_shard);
            for (int j = 0; j < per_shard; ++j) {
                int src = perm[w * per_shard + j];
                shards_images_[w].row(j) = data_->train_images.row(src);
                shards_labels_[w][j] = data_->train_labels[src];
            }
        }
        (void)used;
    }

    int dim() const override { return model_.param_count(); }
    int num_workers() const override { return n_; }
    const MlpModel& model() const { return model_; }
    const std::vector<int>& shard_labels(int i) const { return shards_labels_[i]; }

    double worker_loss(int i, const Vector& theta) const override {
        return model_.loss(theta, shards_images_[i], shards_labels_[i]);
    }

    Vector full_gradient(int i, const Vector& theta) const override {
        Vector g;
        model_.loss_and_gradient(theta, shards_images_[i], shards_labels_[i], &g);
        return g;
    }

    Vector stochastic_gradient(int i, const Vector& theta, int batch,
                               RngStream& rng) const override {
        if (batch < 1) throw ConfigError("stochastic_gradient: batch must be positive");
        auto shard_size = static_cast<int>(shards_images_[i].rows());
        Matrix images(batch, 784);
        std::vector<int> labels(batch);
        for (int j = 0; j < batch; ++j) {
            auto idx = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(shard_size)));
            images.row(j) = shards_images_[i].row(idx);
            labels[j] = shards_labels_[i][idx];
        }
        Vector g;
        model_.loss_and_gradient(theta, images, labels, &g);
        return g;
    }

  private:
    std::shared_ptr<const MnistDataset> data_;
    MlpModel model_;
    int n_;
    std::vector<Matrix> shards_images_;
    std::vector<std::vector<int>> shards_labels_;
};

} // namespace

std::shared_ptr<Objective> mnist_objective(std::shared_ptr<const MnistDataset> data, int n_honest,
                                           RngStream rng, int hidden) {
    return std::make_shared<MnistObjective>(std::move(data), n_honest, rng, hidden);
}

} // namespace rosdhb
