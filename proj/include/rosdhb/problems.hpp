#pragma once

#include "rosdhb/core.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace rosdhb {

/// Analytic metadata attached to an objective when available.
struct ObjectiveInfo {
    std::optional<double> L; // smoothness of the average loss
    std::optional<double> G; // gradient dissimilarity (additive)
    std::optional<double> B; // gradient dissimilarity (multiplicative)
};

/// A distributed objective: one loss per (honest) worker plus oracles over
/// the honest average. Immutable after construction.
class Objective {
  public:
    virtual ~Objective() = default;

    virtual int dim() const = 0;
    virtual int num_workers() const = 0;

    virtual double worker_loss(int i, const Vector& theta) const = 0;
    virtual Vector full_gradient(int i, const Vector& theta) const = 0;
    virtual Vector stochastic_gradient(int i, const Vector& theta, int batch,
                                       RngStream& rng) const = 0;

    virtual double honest_avg_loss(const Vector& theta) const;
    virtual Vector honest_avg_gradient(const Vector& theta) const;

    virtual ObjectiveInfo info() const { return {}; }
};

enum class QuadraticKind { Shifted, Scaled };

/// Synthetic quadratic family with analytically known (L, G, B).
///   shifted: L_i(theta) = 1/2 (theta - c_i)' H (theta - c_i), shared diagonal H.
///   scaled:  H_i = (1 + s_i) H with sum s_i = 0 and a shared minimizer.
struct QuadraticFamilySpec {
    QuadraticKind kind = QuadraticKind::Shifted;
    int d = 2;
    int n = 1;
    double spread_g = 0.0;       // target G (shifted kind; exact by rescaling)
    double spread_b = 0.0;       // target B (scaled kind), must be < 0.9
    double base_curvature = 1.0; // analytic L = base_curvature
};

std::shared_ptr<Objective> make_quadratic(const QuadraticFamilySpec& spec, RngStream rng);

/// Least-squares fit of v(theta) = G^2 + B^2 u(theta) over probe points,
/// where v is the honest gradient spread and u = ||grad L_H||^2.
struct DissimilarityEstimate {
    double G_hat = 0.0;
    double B_hat = 0.0;
    double residual = 0.0;
    bool degenerate = false; // all probes had (nearly) equal u
};

DissimilarityEstimate estimate_dissimilarity(const Objective& obj,
                                             const std::vector<Vector>& thetas);

/// Empirical smoothness: max ||grad(theta) - grad(theta')|| / ||theta - theta'||
/// over probe pairs. Probes include every coordinate axis while the probe
/// budget allows, then random directions.
double estimate_smoothness(const Objective& obj, RngStream rng, int probes);

// ---------------------------------------------------------------------------
// MNIST

struct MnistDataset {
    Matrix train_images; // rows x 784, values in [0, 1]
    std::vector<int> train_labels;
    Matrix test_images;
    std::vector<int> test_labels;
};

/// Parse one IDX image/label file pair (big-endian, magics 0x803 / 0x801).
MnistDataset load_mnist_idx(const std::string& train_images_path,
                            const std::string& train_labels_path,
                            const std::string& test_images_path,
                            const std::string& test_labels_path);

/// 784 -> hidden -> 10 MLP with tanh activation and softmax cross-entropy,
/// parameters flattened into one vector.
class MlpModel {
  public:
    explicit MlpModel(int hidden = 15);

    int hidden() const { return hidden_; }
    int param_count() const;
    Vector init_theta(RngStream& rng) const;

    /// Mean loss over the batch and its gradient w.r.t. theta.
    double loss_and_gradient(const Vector& theta, const Matrix& images,
                             const std::vector<int>& labels, Vector* grad) const;
    double loss(const Vector& theta, const Matrix& images, const std::vector<int>& labels) const;

    /// Argmax prediction; ties broken by lowest class id.
    std::vector<int> predict(const Vector& theta, const Matrix& images) const;

  private:
    int hidden_;
};

/// Fraction of test examples predicted correctly.
double test_accuracy(const MlpModel& model, const Vector& theta, const MnistDataset& data);

/// Randomly permute the training set, split into n_honest equal shards
/// (truncating to the largest multiple), and wrap in an Objective whose
/// stochastic gradients sample with replacement from the worker's shard.
std::shared_ptr<Objective> mnist_objective(std::shared_ptr<const MnistDataset> data,
                                           int n_honest, RngStream rng, int hidden = 15);

} // namespace rosdhb
