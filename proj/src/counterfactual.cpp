#include "escim/counterfactual.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <queue>
#include <sstream>

#include "escim/errors.hpp"
#include "escim/model.hpp"
#include "escim/rng.hpp"

namespace escim {

ZVariant z_variant_from_string(const std::string& s) {
    if (s == "posterior") return ZVariant::Posterior;
    if (s == "prior") return ZVariant::Prior;
    if (s == "none") return ZVariant::NoZ;
    throw ConfigError("unknown z variant '" + s + "'");
}

std::string z_variant_to_string(ZVariant v) {
    switch (v) {
        case ZVariant::Posterior: return "posterior";
        case ZVariant::Prior: return "prior";
        case ZVariant::NoZ: return "none";
    }
    return "?";
}

namespace {

std::uint64_t hash_doubles(const std::vector<double>& v) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (double d : v) {
        std::uint64_t bits;
        std::memcpy(&bits, &d, sizeof bits);
        for (int b = 0; b < 8; ++b) {
            h ^= (bits >> (8 * b)) & 0xff;
            h *= 0x100000001b3ull;
        }
    }
    return h;
}

Matrix2D embed_rows(const std::vector<Matrix2D>& tables, const FeatureSchema& schema,
                    const InteractionLog& log, std::span<const std::size_t> indices) {
    const std::size_t dim = schema.embedding_dim;
    Matrix2D out(indices.size(), schema.total_embedding_dim());
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const Sample& s = log.samples[indices[r]];
        double* row = out.row(r);
        for (std::size_t f = 0; f < schema.n_fields(); ++f) {
            const double* src = tables[f].row(s.feature_ids[f]);
            for (std::size_t j = 0; j < dim; ++j) row[f * dim + j] = src[j];
        }
    }
    return out;
}

void scatter_embedding_grads(const FeatureSchema& schema, const InteractionLog& log,
                             std::span<const std::size_t> indices, const Matrix2D& grads,
                             std::size_t col_offset, std::vector<Matrix2D>& table_grads) {
    const std::size_t dim = schema.embedding_dim;
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const Sample& s = log.samples[indices[r]];
        const double* row = grads.row(r);
        for (std::size_t f = 0; f < schema.n_fields(); ++f) {
            double* dst = table_grads[f].row(s.feature_ids[f]);
            for (std::size_t j = 0; j < dim; ++j) dst[j] += row[col_offset + f * dim + j];
        }
    }
}

void add_l2_grads(const MlpParams& p, MlpGrads& g, double l2) {
    for (std::size_t l = 0; l < p.weights.size(); ++l)
        for (std::size_t k = 0; k < p.weights[l].size(); ++k)
            g.weights[l].data[k] += l2 * p.weights[l].data[k];
}

constexpr double kLogVarClamp = 8.0;

}  // namespace

PretrainData make_pretrain_data(const InteractionLog& log, std::span<const std::size_t> clicked,
                                std::size_t z_dim, std::uint64_t seed) {
    if (clicked.empty()) throw ContractError("pretrain: the clicked space is empty");
    for (std::size_t i : clicked)
        if (i >= log.size() || !log.samples[i].click)
            throw ContractError("pretrain: clicked index set does not match the log");
    PretrainData data;
    data.clicked.assign(clicked.begin(), clicked.end());
    data.z = Matrix2D(clicked.size(), z_dim);
    for (std::size_t r = 0; r < clicked.size(); ++r) {
        Rng rng(derive_seed(seed, "pretrain_z", clicked[r]));
        double* row = data.z.row(r);
        for (std::size_t j = 0; j < z_dim; ++j) row[j] = rng.normal();
    }
    data.z_hash = hash_doubles(data.z.data);
    return data;
}

PretrainNet pretrain(const InteractionLog& log, const PretrainData& data,
                     const EngineConfig& config, std::uint64_t seed) {
    if (data.clicked.empty()) throw ContractError("pretrain: the clicked space is empty");
    PretrainNet net;
    net.schema = log.schema;
    net.z_dim = data.z.cols;
    for (std::size_t f = 0; f < net.schema.n_fields(); ++f) {
        Matrix2D table(net.schema.fields[f].cardinality, net.schema.embedding_dim);
        Rng rng(derive_seed(seed, "cf_embed", f));
        for (double& v : table.data) v = rng.normal() * config.embed_init_std;
        net.embeddings.push_back(std::move(table));
    }
    const std::size_t emb_dim = net.schema.total_embedding_dim();
    std::vector<std::size_t> dims;
    dims.push_back(emb_dim + net.z_dim);
    dims.insert(dims.end(), config.f_hidden.begin(), config.f_hidden.end());
    dims.push_back(1);
    net.f_theta = make_mlp(dims, Activation::Sigmoid, derive_seed(seed, "cf_f_theta"));

    ParamView params;
    for (auto& t : net.embeddings) params.mats.push_back(&t);
    params.add(net.f_theta);
    AdamState adam = make_adam(params, config.lr, config.weight_decay);

    const std::size_t n = data.clicked.size();
    for (std::size_t epoch = 0; epoch < config.pretrain_epochs; ++epoch) {
        const auto batch_list =
            batches(n, config.batch_size, derive_seed(seed, "pretrain_shuffle"), epoch);
        for (std::size_t b = 0; b < batch_list.size(); ++b) {
            const auto& rows = batch_list[b];
            std::vector<std::size_t> sample_idx(rows.size());
            for (std::size_t r = 0; r < rows.size(); ++r) sample_idx[r] = data.clicked[rows[r]];

            Matrix2D xin(rows.size(), emb_dim + net.z_dim);
            const Matrix2D emb = embed_rows(net.embeddings, net.schema, log, sample_idx);
            for (std::size_t r = 0; r < rows.size(); ++r) {
                double* dst = xin.row(r);
                const double* e = emb.row(r);
                for (std::size_t j = 0; j < emb_dim; ++j) dst[j] = e[j];
                const double* zr = data.z.row(rows[r]);
                for (std::size_t j = 0; j < net.z_dim; ++j) dst[emb_dim + j] = zr[j];
            }

            ForwardCache cache;
            const Matrix2D p = mlp_forward(net.f_theta, xin, cache, config.dropout, true,
                                           derive_seed(seed, "pretrain_drop", epoch * 1000003ull + b));
            Matrix2D g(rows.size(), 1);
            for (std::size_t r = 0; r < rows.size(); ++r) {
                const double y = double(log.samples[sample_idx[r]].conversion);
                g.data[r] = bce_grad(p.data[r], y) / double(rows.size());
            }
            MlpGrads grads = mlp_backward(net.f_theta, cache, g);
            add_l2_grads(net.f_theta, grads, config.l2);

            std::vector<Matrix2D> table_grads;
            for (const auto& t : net.embeddings) table_grads.emplace_back(t.rows, t.cols);
            scatter_embedding_grads(net.schema, log, sample_idx, grads.input, 0, table_grads);

            GradView gv;
            for (const auto& t : table_grads) gv.mats.push_back(&t);
            gv.add(grads);
            adam_step(adam, params, gv);
        }
    }
    return net;
}

double kl_anneal_beta(std::size_t step, std::size_t total_steps, double beta_max,
                      double anneal_fraction) {
    if (anneal_fraction <= 0.0) return beta_max;
    const double warm = anneal_fraction * double(total_steps);
    if (warm <= 0.0) return beta_max;
    const double frac = double(step) / warm;
    return frac >= 1.0 ? beta_max : beta_max * frac;
}

AbductionVae train_vae(const InteractionLog& log, const PretrainNet& net, const PretrainData& data,
                       const EngineConfig& config, std::uint64_t seed, VaeTrace* trace) {
    if (data.clicked.empty()) throw ContractError("train_vae: the clicked space is empty");
    if (net.z_dim == 0) throw ContractError("train_vae: the conversion net has no z input");
    const std::size_t emb_dim = net.schema.total_embedding_dim();
    const std::size_t z_dim = net.z_dim;

    AbductionVae vae;
    vae.z_dim = z_dim;
    vae.beta_max = config.beta_max;
    vae.anneal_fraction = config.anneal_fraction;
    {
        std::vector<std::size_t> enc_dims{emb_dim + 1};
        enc_dims.insert(enc_dims.end(), config.encoder_hidden.begin(), config.encoder_hidden.end());
        enc_dims.push_back(2 * z_dim);
        vae.encoder = make_mlp(enc_dims, Activation::Identity, derive_seed(seed, "vae_encoder"));
        std::vector<std::size_t> dec_dims{z_dim + emb_dim};
        dec_dims.insert(dec_dims.end(), config.decoder_hidden.begin(), config.decoder_hidden.end());
        dec_dims.push_back(1);
        vae.decoder = make_mlp(dec_dims, Activation::Sigmoid, derive_seed(seed, "vae_decoder"));
    }

    ParamView params;
    params.add(vae.encoder);
    params.add(vae.decoder);
    AdamState adam = make_adam(params, config.lr, config.weight_decay);

    const std::size_t n = data.clicked.size();
    const std::size_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
    const std::size_t total_steps = config.vae_epochs * steps_per_epoch;
    std::size_t step = 0;

    for (std::size_t epoch = 0; epoch < config.vae_epochs; ++epoch) {
        const auto batch_list = batches(n, config.batch_size, derive_seed(seed, "vae_shuffle"), epoch);
        for (std::size_t b = 0; b < batch_list.size(); ++b, ++step) {
            const auto& rows = batch_list[b];
            const std::size_t bs = rows.size();
            std::vector<std::size_t> sample_idx(bs);
            for (std::size_t r = 0; r < bs; ++r) sample_idx[r] = data.clicked[rows[r]];

            const Matrix2D emb = embed_rows(net.embeddings, net.schema, log, sample_idx);
            Matrix2D enc_in(bs, emb_dim + 1);
            for (std::size_t r = 0; r < bs; ++r) {
                double* dst = enc_in.row(r);
                const double* e = emb.row(r);
                for (std::size_t j = 0; j < emb_dim; ++j) dst[j] = e[j];
                dst[emb_dim] = double(log.samples[sample_idx[r]].conversion);
            }

            const std::uint64_t tag = epoch * 1000003ull + b;
            ForwardCache enc_cache;
            const Matrix2D enc_out = mlp_forward(vae.encoder, enc_in, enc_cache, config.dropout,
                                                 true, derive_seed(seed, "vae_drop_enc", tag));

            // reparameterized draw, with the clamped-logvar region carrying no gradient
            Rng eps_rng(derive_seed(seed, "vae_eps", step));
            Matrix2D eps(bs, z_dim), sigma(bs, z_dim);
            std::vector<std::uint8_t> clamped(bs * z_dim, 0);
            Matrix2D dec_in(bs, z_dim + emb_dim);
            double kl_acc = 0.0;
            for (std::size_t r = 0; r < bs; ++r) {
                const double* mu = enc_out.row(r);
                const double* lv = enc_out.row(r) + z_dim;
                double* dst = dec_in.row(r);
                for (std::size_t j = 0; j < z_dim; ++j) {
                    double lvj = lv[j];
                    if (lvj > kLogVarClamp || lvj < -kLogVarClamp) {
                        clamped[r * z_dim + j] = 1;
                        lvj = std::clamp(lvj, -kLogVarClamp, kLogVarClamp);
                    }
                    const double s = std::exp(0.5 * lvj);
                    const double e = eps_rng.normal();
                    sigma.at(r, j) = s;
                    eps.at(r, j) = e;
                    dst[j] = mu[j] + s * e;
                    kl_acc += 0.5 * (mu[j] * mu[j] + s * s - 1.0 - lvj);
                }
                const double* em = emb.row(r);
                for (std::size_t j = 0; j < emb_dim; ++j) dst[z_dim + j] = em[j];
            }

            ForwardCache dec_cache;
            const Matrix2D p_rec = mlp_forward(vae.decoder, dec_in, dec_cache, config.dropout, true,
                                               derive_seed(seed, "vae_drop_dec", tag));

            const double beta =
                kl_anneal_beta(step, total_steps, config.beta_max, config.anneal_fraction);
            double rec_acc = 0.0;
            Matrix2D g_rec(bs, 1);
            for (std::size_t r = 0; r < bs; ++r) {
                const double y = double(log.samples[sample_idx[r]].conversion);
                rec_acc += bce(p_rec.data[r], y);
                g_rec.data[r] = bce_grad(p_rec.data[r], y) / double(bs);
            }

            MlpGrads dec_grads = mlp_backward(vae.decoder, dec_cache, g_rec);
            add_l2_grads(vae.decoder, dec_grads, config.l2);

            Matrix2D g_enc(bs, 2 * z_dim);
            for (std::size_t r = 0; r < bs; ++r) {
                const double* gz = dec_grads.input.row(r);
                const double* mu = enc_out.row(r);
                double* g = g_enc.row(r);
                for (std::size_t j = 0; j < z_dim; ++j) {
                    const double s = sigma.at(r, j);
                    g[j] = gz[j] + beta * mu[j] / double(bs);
                    double glv = gz[j] * eps.at(r, j) * 0.5 * s +
                                 beta * 0.5 * (s * s - 1.0) / double(bs);
                    if (clamped[r * z_dim + j]) glv = 0.0;
                    g[z_dim + j] = glv;
                }
            }
            MlpGrads enc_grads = mlp_backward(vae.encoder, enc_cache, g_enc);
            add_l2_grads(vae.encoder, enc_grads, config.l2);

            GradView gv;
            gv.add(enc_grads);
            gv.add(dec_grads);
            adam_step(adam, params, gv);

            if (trace) {
                trace->loss.push_back(rec_acc / double(bs) + beta * kl_acc / double(bs));
                trace->kl.push_back(kl_acc / double(bs));
                trace->beta.push_back(beta);
            }
        }
    }
    return vae;
}

AbductionResult abduct(const AbductionVae& vae, const PretrainNet& net, const InteractionLog& log,
                       std::span<const std::size_t> indices, std::uint64_t seed) {
    const std::size_t emb_dim = net.schema.total_embedding_dim();
    const std::size_t z_dim = vae.z_dim;
    AbductionResult out;
    out.posterior.resize(indices.size());
    out.z = Matrix2D(indices.size(), z_dim);

    constexpr std::size_t kChunk = 8192;
    for (std::size_t start = 0; start < indices.size(); start += kChunk) {
        const std::size_t end = std::min(start + kChunk, indices.size());
        const auto chunk = indices.subspan(start, end - start);
        const Matrix2D emb = embed_rows(net.embeddings, net.schema, log, chunk);
        Matrix2D enc_in(chunk.size(), emb_dim + 1);
        for (std::size_t r = 0; r < chunk.size(); ++r) {
            double* dst = enc_in.row(r);
            const double* e = emb.row(r);
            for (std::size_t j = 0; j < emb_dim; ++j) dst[j] = e[j];
            dst[emb_dim] = double(log.samples[chunk[r]].conversion);
        }
        const Matrix2D enc_out = mlp_forward(vae.encoder, enc_in);
        for (std::size_t r = 0; r < chunk.size(); ++r) {
            PosteriorGaussian& pg = out.posterior[start + r];
            pg.mu.resize(z_dim);
            pg.sigma.resize(z_dim);
            Rng rng(derive_seed(seed, "z_draw", chunk[r]));
            double* zrow = out.z.row(start + r);
            for (std::size_t j = 0; j < z_dim; ++j) {
                pg.mu[j] = enc_out.at(r, j);
                const double lv = std::clamp(enc_out.at(r, z_dim + j), -kLogVarClamp, kLogVarClamp);
                pg.sigma[j] = std::exp(0.5 * lv);
                if (!std::isfinite(pg.mu[j]) || !std::isfinite(pg.sigma[j]))
                    throw NumericError("abduct: non-finite posterior parameters");
                zrow[j] = pg.mu[j] + pg.sigma[j] * rng.normal();
            }
        }
    }
    return out;
}

std::vector<double> predict_cvr_with_z(const PretrainNet& net, const AbductionVae* vae,
                                       ZVariant variant, const InteractionLog& log,
                                       std::span<const std::size_t> indices, std::uint64_t seed,
                                       std::size_t n_z_draws) {
    if (n_z_draws < 1) throw ContractError("predict_cvr_with_z: n_z_draws must be >= 1");
    if (variant == ZVariant::Posterior && vae == nullptr)
        throw ContractError("predict_cvr_with_z: posterior variant requires a trained VAE");
    const std::size_t emb_dim = net.schema.total_embedding_dim();
    const std::size_t z_dim = net.z_dim;
    if (variant == ZVariant::NoZ && z_dim != 0)
        throw ContractError("predict_cvr_with_z: no-z variant on a net with a z input");

    std::vector<double> out(indices.size(), 0.0);

    // Posterior parameters are computed once; draws vary only the noise.
    std::vector<PosteriorGaussian> posterior;
    if (variant == ZVariant::Posterior) {
        AbductionResult ab = abduct(*vae, net, log, indices, seed);
        posterior = std::move(ab.posterior);
    }

    constexpr std::size_t kChunk = 8192;
    for (std::size_t start = 0; start < indices.size(); start += kChunk) {
        const std::size_t end = std::min(start + kChunk, indices.size());
        const auto chunk = indices.subspan(start, end - start);
        const Matrix2D emb = embed_rows(net.embeddings, net.schema, log, chunk);
        Matrix2D xin(chunk.size(), emb_dim + z_dim);
        std::vector<Rng> rngs;
        rngs.reserve(chunk.size());
        for (std::size_t r = 0; r < chunk.size(); ++r)
            rngs.emplace_back(derive_seed(seed, "z_draw", chunk[r]));
        for (std::size_t draw = 0; draw < n_z_draws; ++draw) {
            for (std::size_t r = 0; r < chunk.size(); ++r) {
                double* dst = xin.row(r);
                const double* e = emb.row(r);
                for (std::size_t j = 0; j < emb_dim; ++j) dst[j] = e[j];
                for (std::size_t j = 0; j < z_dim; ++j) {
                    const double eps = rngs[r].normal();
                    if (variant == ZVariant::Posterior) {
                        const PosteriorGaussian& pg = posterior[start + r];
                        dst[emb_dim + j] = pg.mu[j] + pg.sigma[j] * eps;
                    } else {
                        dst[emb_dim + j] = eps;
                    }
                }
            }
            const Matrix2D p = mlp_forward(net.f_theta, xin);
            for (std::size_t r = 0; r < chunk.size(); ++r) out[start + r] += p.data[r];
        }
    }
    for (double& v : out) v /= double(n_z_draws);
    return out;
}

std::vector<double> predict_counterfactual_cvr(const PretrainNet& net, const AbductionVae& vae,
                                               const InteractionLog& log,
                                               std::span<const std::size_t> non_clicked,
                                               std::uint64_t seed, std::size_t n_z_draws) {
    return predict_cvr_with_z(net, &vae, ZVariant::Posterior, log, non_clicked, seed, n_z_draws);
}

std::size_t CounterfactualLabelSet::positives() const {
    std::size_t n = 0;
    for (auto l : labels) n += l;
    return n;
}

double CounterfactualLabelSet::mean_label() const {
    return labels.empty() ? 0.0 : double(positives()) / double(labels.size());
}

std::unordered_map<std::size_t, std::uint8_t> CounterfactualLabelSet::as_map() const {
    std::unordered_map<std::size_t, std::uint8_t> m;
    m.reserve(indices.size());
    for (std::size_t k = 0; k < indices.size(); ++k) m.emplace(indices[k], labels[k]);
    return m;
}

CounterfactualLabelSet transform_max(std::span<const std::size_t> non_clicked,
                                     std::span<const double> pcvr_cf,
                                     std::span<const double> clicked_pcvr) {
    if (clicked_pcvr.empty()) throw ContractError("transform_max: no clicked predictions");
    if (non_clicked.size() != pcvr_cf.size())
        throw ContractError("transform_max: index/score lengths disagree");
    const double tau = *std::max_element(clicked_pcvr.begin(), clicked_pcvr.end());
    CounterfactualLabelSet out;
    out.method = TransformMethod::Max;
    out.threshold_or_k = tau;
    out.indices.assign(non_clicked.begin(), non_clicked.end());
    out.pcvr_cf.assign(pcvr_cf.begin(), pcvr_cf.end());
    out.labels.resize(non_clicked.size());
    for (std::size_t i = 0; i < pcvr_cf.size(); ++i)
        out.labels[i] = pcvr_cf[i] >= tau ? 1 : 0;
    return out;
}

std::vector<std::uint8_t> top_k_labels(std::span<const double> scores, std::size_t k) {
    std::vector<std::uint8_t> labels(scores.size(), 0);
    if (k == 0) return labels;
    k = std::min(k, scores.size());

    struct Entry {
        double score;
        std::size_t index;
    };
    // top() is the worst kept entry: lowest score, ties resolved to the
    // highest index so earlier samples survive eviction.
    auto worse = [](const Entry& a, const Entry& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.index < b.index;
    };
    std::priority_queue<Entry, std::vector<Entry>, decltype(worse)> heap(worse);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (heap.size() < k) {
            heap.push({scores[i], i});
        } else if (scores[i] > heap.top().score) {
            heap.pop();
            heap.push({scores[i], i});
        }
    }
    while (!heap.empty()) {
        labels[heap.top().index] = 1;
        heap.pop();
    }
    return labels;
}

CounterfactualLabelSet transform_ratio(std::span<const std::size_t> non_clicked,
                                       std::span<const double> pcvr_cf, std::size_t n_converted,
                                       std::size_t n_clicked) {
    if (n_clicked == 0) throw ContractError("transform_ratio: the clicked space is empty");
    if (non_clicked.size() != pcvr_cf.size())
        throw ContractError("transform_ratio: index/score lengths disagree");
    const std::size_t k = std::min(
        static_cast<std::size_t>(double(n_converted) * double(non_clicked.size()) /
                                 double(n_clicked)),
        non_clicked.size());
    CounterfactualLabelSet out;
    out.method = TransformMethod::Ratio;
    out.threshold_or_k = double(k);
    out.indices.assign(non_clicked.begin(), non_clicked.end());
    out.pcvr_cf.assign(pcvr_cf.begin(), pcvr_cf.end());
    out.labels = top_k_labels(pcvr_cf, k);
    return out;
}

CounterfactualSpace build_counterfactual_space(const InteractionLog& log,
                                               const CounterfactualLabelSet& labels) {
    const SpacePartition part = partition_spaces(log);
    if (labels.indices.size() != part.non_clicked.size())
        throw ContractError("counterfactual space: label domain size != |N|");
    for (std::size_t i = 0; i < labels.indices.size(); ++i)
        if (labels.indices[i] != part.non_clicked[i])
            throw ContractError("counterfactual space: label domain is not exactly N");
    CounterfactualSpace out;
    out.log = &log;
    out.labels = &labels;
    return out;
}

void write_label_csv(const CounterfactualLabelSet& labels, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write label file: " + path);
    out << "sample_index,pcvr_cf,label\n";
    char buf[48];
    for (std::size_t i = 0; i < labels.indices.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", labels.pcvr_cf[i]);
        out << labels.indices[i] << "," << buf << "," << int(labels.labels[i]) << "\n";
    }
    if (!out) throw IoError("write failed: " + path);
}

CounterfactualLabelSet load_label_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open label file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path + ": missing header");
    CounterfactualLabelSet out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string a, b, c;
        if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, c, ','))
            throw ParseError(path + " line " + std::to_string(line_no) + ": expected 3 columns");
        out.indices.push_back(std::stoull(a));
        out.pcvr_cf.push_back(std::stod(b));
        const int l = std::stoi(c);
        if (l != 0 && l != 1)
            throw ParseError(path + " line " + std::to_string(line_no) + ": label must be 0 or 1");
        out.labels.push_back(static_cast<std::uint8_t>(l));
    }
    return out;
}

LabelPipelineResult run_label_pipeline(const InteractionLog& log, const EngineConfig& config,
                                       TransformMethod method, std::uint64_t seed) {
    const SpacePartition part = partition_spaces(log);
    if (part.clicked.empty())
        throw ContractError(
            "label pipeline: the log has no clicked samples; generate more data or raise the "
            "click rate");

    const std::size_t z_dim =
        config.z_variant == ZVariant::NoZ ? 0 : log.schema.total_embedding_dim();
    const PretrainData data = make_pretrain_data(log, part.clicked, z_dim, seed);
    const PretrainNet net = pretrain(log, data, config, seed);

    AbductionVae vae;
    const AbductionVae* vae_ptr = nullptr;
    if (config.z_variant == ZVariant::Posterior) {
        vae = train_vae(log, net, data, config, seed);
        vae_ptr = &vae;
    }

    LabelPipelineResult out;
    out.pretrain_z_hash = data.z_hash;
    out.clicked_pcvr = predict_cvr_with_z(net, vae_ptr, config.z_variant, log, part.clicked, seed,
                                          config.n_z_draws);
    const std::vector<double> pcvr_cf = predict_cvr_with_z(net, vae_ptr, config.z_variant, log,
                                                           part.non_clicked, seed, config.n_z_draws);
    if (method == TransformMethod::Max) {
        out.labels = transform_max(part.non_clicked, pcvr_cf, out.clicked_pcvr);
    } else {
        out.labels =
            transform_ratio(part.non_clicked, pcvr_cf, part.converted.size(), part.clicked.size());
    }
    return out;
}

}  // namespace escim
