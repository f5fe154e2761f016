#include "volseg/loss.hpp"

#include <cmath>
#include <memory>

namespace volseg {

std::vector<double> make_ds_weights(int64_t levels) {
    if (levels < 1) throw ConfigError("ds_weights: need at least one level");
    std::vector<double> w(static_cast<size_t>(levels));
    double total = 0.0, cur = 1.0;
    for (auto& x : w) {
        x = cur;
        total += cur;
        cur *= 0.5;
    }
    for (auto& x : w) x /= total;
    return w;
}

void validate_loss_config(const LossConfig& cfg, int64_t levels, int64_t num_classes) {
    if (!(cfg.dice_smooth > 0.0))
        throw ConfigError("loss: dice_smooth must be positive");
    if (static_cast<int64_t>(cfg.ds_weights.size()) != levels)
        throw ConfigError("loss: ds_weights length must equal supervision levels");
    double sum = 0.0;
    for (double w : cfg.ds_weights) {
        if (w < 0.0) throw ConfigError("loss: ds_weights must be non-negative");
        sum += w;
    }
    if (std::fabs(sum - 1.0) > 1e-9)
        throw ConfigError("loss: ds_weights must sum to 1");
    if (!cfg.class_weights.empty()) {
        if (static_cast<int64_t>(cfg.class_weights.size()) != num_classes)
            throw ConfigError("loss: class_weights length must equal num_classes");
        for (double w : cfg.class_weights)
            if (w < 0.0) throw ConfigError("loss: class_weights must be non-negative");
    }
}

ad::NodeId dice_ce_loss(ad::Tape& tape, ad::NodeId logits, const Tensor& target,
                        const LossConfig& cfg, double* out_dice) {
    const Tensor& z = tape.value(logits);
    if (z.rank() != 5) throw ConfigError("dice_ce_loss: logits must be [n,c,z,y,x]");
    const int64_t n = z.dim(0), c = z.dim(1);
    const int64_t vox = z.dim(2) * z.dim(3) * z.dim(4);
    if (target.rank() != 4 || target.dim(0) != n || target.dim(1) != z.dim(2) ||
        target.dim(2) != z.dim(3) || target.dim(3) != z.dim(4))
        throw ConfigError("dice_ce_loss: target shape must match logits spatial shape");
    if (c < 2) throw ConfigError("dice_ce_loss: need at least two classes");
    if (!(cfg.dice_smooth > 0.0)) throw ConfigError("dice_ce_loss: dice_smooth must be positive");

    std::vector<double> cw(static_cast<size_t>(c), 1.0);
    if (!cfg.class_weights.empty()) {
        if (static_cast<int64_t>(cfg.class_weights.size()) != c)
            throw ConfigError("dice_ce_loss: class_weights length must equal classes");
        cw = cfg.class_weights;
    }

    auto labels = std::make_shared<std::vector<int>>(static_cast<size_t>(n * vox));
    for (int64_t i = 0; i < n * vox; ++i) {
        const double t = target[i];
        const double r = std::nearbyint(t);
        if (t != r || r < 0.0 || r >= static_cast<double>(c))
            throw DataError("dice_ce_loss: label out of range at voxel " +
                            std::to_string(i));
        (*labels)[static_cast<size_t>(i)] = static_cast<int>(r);
    }

    // Softmax probabilities, stored for the backward pass.
    auto probs = std::make_shared<Tensor>(z.shape());
    for (int64_t i = 0; i < n; ++i)
        for (int64_t v = 0; v < vox; ++v) {
            double mx = z[(i * c) * vox + v];
            for (int64_t k = 1; k < c; ++k)
                mx = std::max(mx, z[(i * c + k) * vox + v]);
            double denom = 0.0;
            for (int64_t k = 0; k < c; ++k) {
                const double e = std::exp(z[(i * c + k) * vox + v] - mx);
                (*probs)[(i * c + k) * vox + v] = e;
                denom += e;
            }
            for (int64_t k = 0; k < c; ++k) (*probs)[(i * c + k) * vox + v] /= denom;
        }

    // Cross entropy, class-weighted mean over all voxels.
    double ce = 0.0, wsum = 0.0;
    for (int64_t i = 0; i < n; ++i)
        for (int64_t v = 0; v < vox; ++v) {
            const int g = (*labels)[static_cast<size_t>(i * vox + v)];
            const double w = cw[static_cast<size_t>(g)];
            ce += w * -std::log(std::max((*probs)[(i * c + g) * vox + v], 1e-300));
            wsum += w;
        }
    if (!(wsum > 0.0)) throw ConfigError("dice_ce_loss: class weights sum to zero");
    ce /= wsum;

    // Batch-aggregated soft Dice per foreground class.
    const double eps = cfg.dice_smooth;
    const int64_t fg_classes = c - 1;
    auto num = std::make_shared<std::vector<double>>(static_cast<size_t>(c), 0.0);
    auto den = std::make_shared<std::vector<double>>(static_cast<size_t>(c), 0.0);
    double dice_mean = 0.0;
    for (int64_t k = 1; k < c; ++k) {
        double s_pg = 0.0, s_p = 0.0, s_g = 0.0;
        for (int64_t i = 0; i < n; ++i)
            for (int64_t v = 0; v < vox; ++v) {
                const double p = (*probs)[(i * c + k) * vox + v];
                s_p += p;
                if ((*labels)[static_cast<size_t>(i * vox + v)] == k) {
                    s_g += 1.0;
                    s_pg += p;
                }
            }
        (*num)[static_cast<size_t>(k)] = 2.0 * s_pg + eps;
        (*den)[static_cast<size_t>(k)] = s_p + s_g + eps;
        dice_mean += (*num)[static_cast<size_t>(k)] / (*den)[static_cast<size_t>(k)];
    }
    dice_mean /= static_cast<double>(fg_classes);
    if (out_dice) *out_dice = dice_mean;

    const double total = (1.0 - dice_mean) + ce;
    const ad::NodeId self = tape.custom(Tensor::scalar(total), {logits}, nullptr);
    auto cw_shared = std::make_shared<std::vector<double>>(std::move(cw));
    tape.node(self).backward = [self, logits, probs, labels, num, den, cw_shared, n, c,
                                vox, wsum, fg_classes](ad::Tape& t) {
        if (!t.requires_grad(logits)) return;
        const double gscale = t.node(self).grad[0];
        Tensor& gz = t.grad_buffer(logits);

        // dL_dice/dp_k(v) takes one of two per-class values depending on
        // whether the voxel belongs to class k.
        std::vector<double> q_in(static_cast<size_t>(c), 0.0);
        std::vector<double> q_out(static_cast<size_t>(c), 0.0);
        for (int64_t k = 1; k < c; ++k) {
            const double nk = (*num)[static_cast<size_t>(k)];
            const double dk = (*den)[static_cast<size_t>(k)];
            const double inv = 1.0 / static_cast<double>(fg_classes);
            q_in[static_cast<size_t>(k)] = -inv * (2.0 * dk - nk) / (dk * dk);
            q_out[static_cast<size_t>(k)] = inv * nk / (dk * dk);
        }

        for (int64_t i = 0; i < n; ++i)
            for (int64_t v = 0; v < vox; ++v) {
                const int g = (*labels)[static_cast<size_t>(i * vox + v)];
                const double wg = (*cw_shared)[static_cast<size_t>(g)] / wsum;
                double dot = 0.0;  // sum_k q_k p_k for the softmax chain
                for (int64_t k = 1; k < c; ++k) {
                    const double q = (k == g) ? q_in[static_cast<size_t>(k)]
                                              : q_out[static_cast<size_t>(k)];
                    dot += q * (*probs)[(i * c + k) * vox + v];
                }
                for (int64_t k = 0; k < c; ++k) {
                    const double p = (*probs)[(i * c + k) * vox + v];
                    const double q = (k == 0) ? 0.0
                                              : ((k == g) ? q_in[static_cast<size_t>(k)]
                                                          : q_out[static_cast<size_t>(k)]);
                    const double d_dice = p * (q - dot);
                    const double d_ce = wg * (p - (k == g ? 1.0 : 0.0));
                    gz[(i * c + k) * vox + v] += gscale * (d_dice + d_ce);
                }
            }
    };
    return self;
}

Tensor downsample_labels(const Tensor& target, const std::array<int64_t, 3>& out_zyx) {
    if (target.rank() != 4)
        throw ConfigError("downsample_labels: target must be [n,z,y,x]");
    const int64_t n = target.dim(0);
    std::array<int64_t, 3> in{target.dim(1), target.dim(2), target.dim(3)};
    std::array<int64_t, 3> f{};
    for (int a = 0; a < 3; ++a) {
        if (out_zyx[a] < 1 || in[a] % out_zyx[a] != 0)
            throw ConfigError("downsample_labels: output extent must divide input");
        f[a] = in[a] / out_zyx[a];
    }
    Tensor out({n, out_zyx[0], out_zyx[1], out_zyx[2]});
    int64_t w = 0;
    for (int64_t i = 0; i < n; ++i)
        for (int64_t z = 0; z < out_zyx[0]; ++z)
            for (int64_t y = 0; y < out_zyx[1]; ++y)
                for (int64_t x = 0; x < out_zyx[2]; ++x, ++w)
                    out[w] = target[((i * in[0] + z * f[0]) * in[1] + y * f[1]) * in[2] +
                                    x * f[2]];
    return out;
}

ad::NodeId deep_supervision_loss(ad::Tape& tape, const std::vector<ad::NodeId>& pyramid,
                                 const Tensor& target, const LossConfig& cfg,
                                 double* out_dice) {
    if (pyramid.empty()) throw ConfigError("deep_supervision_loss: empty pyramid");
    if (static_cast<int64_t>(cfg.ds_weights.size()) !=
        static_cast<int64_t>(pyramid.size()))
        throw ConfigError("deep_supervision_loss: ds_weights length must equal pyramid length");

    std::vector<ad::NodeId> losses;
    for (size_t k = 0; k < pyramid.size(); ++k) {
        const Tensor& z = tape.value(pyramid[k]);
        const std::array<int64_t, 3> res{z.dim(2), z.dim(3), z.dim(4)};
        Tensor t_k = (res[0] == target.dim(1) && res[1] == target.dim(2) &&
                      res[2] == target.dim(3))
                         ? target
                         : downsample_labels(target, res);
        losses.push_back(
            dice_ce_loss(tape, pyramid[k], t_k, cfg, k == 0 ? out_dice : nullptr));
    }
    return tape.weighted_sum(losses, cfg.ds_weights);
}

}  // namespace volseg
