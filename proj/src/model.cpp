#include "sfm/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace sfm {

ErfCut erf_cut_from_string(const std::string& s) {
    if (s == "stage3_mamba" || s == "stage3") return ErfCut::stage3_mamba;
    if (s == "full") return ErfCut::full;
    throw std::invalid_argument("unknown ERF cut: " + s);
}

void ModelConfig::validate() const {
    require(image_size >= 32 && image_size % 32 == 0,
            "ModelConfig: image_size must be a positive multiple of 32");
    require(in_channels >= 1, "ModelConfig: in_channels must be >= 1");
    require(base_dim >= 1, "ModelConfig: base_dim must be >= 1");
    for (int64_t d : depths) require(d >= 0, "ModelConfig: depths must be >= 0");
    require(depths[2] % 2 == 0 && depths[3] % 2 == 0,
            "ModelConfig: stage 3/4 depths must be even (N/2 Mamba + N/2 attention)");
    require(state_dim >= 1 && state_dim <= 64, "ModelConfig: state_dim must be in [1, 64]");
    require(heads >= 1, "ModelConfig: heads must be >= 1");
    require(stage_dim(2) % heads == 0 && stage_dim(3) % heads == 0,
            "ModelConfig: heads must divide the stage 3/4 widths");
    require(conv_kernel >= 1, "ModelConfig: conv_kernel must be >= 1");
    require(lanes >= 1, "ModelConfig: lanes must be >= 1");
    require(classes >= 2, "ModelConfig: classes must be >= 2");
    if (fold == FoldPolicyKind::fixed) {
        require(fold_b1 >= 1, "ModelConfig: fixed fold_b1 must be >= 1");
    }
}

std::vector<std::string> ModelConfig::warnings() const {
    std::vector<std::string> out;
    for (int stage : {2, 3}) {
        const int64_t g = stage_grid(stage);
        const int64_t t = g * g + (swap_aux ? 2 : 0);
        if (depths[stage] > 0 && t <= conv_kernel) {
            out.push_back("stage " + std::to_string(stage + 1) + " sequence length " +
                          std::to_string(t) + " does not exceed conv kernel width " +
                          std::to_string(conv_kernel));
        }
    }
    return out;
}

std::string ModelConfig::to_kv_text() const {
    std::ostringstream os;
    os << "image_size = " << image_size << "\n";
    os << "in_channels = " << in_channels << "\n";
    os << "base_dim = " << base_dim << "\n";
    os << "depths = " << depths[0] << "," << depths[1] << "," << depths[2] << "," << depths[3]
       << "\n";
    os << "state_dim = " << state_dim << "\n";
    os << "heads = " << heads << "\n";
    os << "conv_kernel = " << conv_kernel << "\n";
    os << "lanes = " << lanes << "\n";
    os << "fold = ";
    switch (fold) {
        case FoldPolicyKind::off: os << "off"; break;
        case FoldPolicyKind::fixed: os << "fixed:" << fold_b1; break;
        case FoldPolicyKind::adaptive: os << "adaptive"; break;
    }
    os << "\n";
    if (!lut_path.empty()) os << "lut = " << lut_path << "\n";
    os << "swap = " << (swap_aux ? "on" : "off") << "\n";
    os << "discard = " << to_string(discard) << "\n";
    os << "classes = " << classes << "\n";
    os << "seed = " << seed << "\n";
    return os.str();
}

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

ModelConfig ModelConfig::from_kv_text(const std::string& text) {
    ModelConfig cfg;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const size_t eq = line.find('=');
        require(eq != std::string::npos, "ModelConfig: expected 'key = value': " + line);
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key == "image_size") cfg.image_size = std::stoll(val);
        else if (key == "in_channels") cfg.in_channels = std::stoll(val);
        else if (key == "base_dim") cfg.base_dim = std::stoll(val);
        else if (key == "depths") {
            std::istringstream ds(val);
            std::string tok;
            for (int i = 0; i < 4; ++i) {
                require(static_cast<bool>(std::getline(ds, tok, ',')),
                        "ModelConfig: depths needs four values");
                cfg.depths[static_cast<size_t>(i)] = std::stoll(trim(tok));
            }
        } else if (key == "state_dim") cfg.state_dim = std::stoll(val);
        else if (key == "heads") cfg.heads = std::stoll(val);
        else if (key == "conv_kernel") cfg.conv_kernel = std::stoll(val);
        else if (key == "lanes") cfg.lanes = static_cast<int>(std::stoll(val));
        else if (key == "fold") {
            if (val == "off") cfg.fold = FoldPolicyKind::off;
            else if (val == "adaptive") cfg.fold = FoldPolicyKind::adaptive;
            else if (val.rfind("fixed:", 0) == 0) {
                cfg.fold = FoldPolicyKind::fixed;
                cfg.fold_b1 = std::stoll(val.substr(6));
            } else {
                throw std::invalid_argument("ModelConfig: bad fold policy: " + val);
            }
        } else if (key == "lut") cfg.lut_path = val;
        else if (key == "swap") {
            require(val == "on" || val == "off", "ModelConfig: swap must be on|off");
            cfg.swap_aux = val == "on";
        } else if (key == "discard") cfg.discard = discard_policy_from_string(val);
        else if (key == "classes") cfg.classes = std::stoll(val);
        else if (key == "seed") cfg.seed = std::stoull(val);
        else throw std::invalid_argument("ModelConfig: unknown key: " + key);
    }
    cfg.validate();
    return cfg;
}

ModelConfig ModelConfig::from_file(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), "ModelConfig: cannot open: " + path);
    std::ostringstream os;
    os << f.rdbuf();
    return from_kv_text(os.str());
}

ConvBlockParams ConvBlockParams::init(int64_t dim, Rng& rng) {
    ConvBlockParams p;
    p.conv_a = Conv2dParams::init(dim, dim, 3, 1, 1, rng);
    p.conv_b = Conv2dParams::init(dim, dim, 3, 1, 1, rng);
    p.ln_a = LayerNormParams::init(dim);
    p.ln_b = LayerNormParams::init(dim);
    return p;
}

void ConvBlockParams::collect(std::vector<ParamRef>& refs) {
    conv_a.collect(refs);
    conv_b.collect(refs);
    ln_a.collect(refs);
    ln_b.collect(refs);
}

Grid conv_block_fwd(const ConvBlockParams& p, const Grid& x, ConvBlockCtx* ctx) {
    Grid ca_g = conv2d_fwd(p.conv_a, x);
    Tensor3 ca = grid_to_tokens(ca_g);
    Tensor3 na = layernorm_fwd(p.ln_a, ca);
    Grid sa = tokens_to_grid(silu_fwd(na), x.h, x.w);
    Grid cb_g = conv2d_fwd(p.conv_b, sa);
    Tensor3 cb = grid_to_tokens(cb_g);
    Tensor3 nb = layernorm_fwd(p.ln_b, cb);
    Grid out = tokens_to_grid(silu_fwd(nb), x.h, x.w);
    for (int64_t i = 0; i < out.size(); ++i) out.data[i] += x.data[i];
    if (ctx) {
        ctx->x = x;
        ctx->ca = std::move(ca);
        ctx->na = std::move(na);
        ctx->sa = std::move(sa);
        ctx->cb = std::move(cb);
        ctx->nb = std::move(nb);
    }
    return out;
}

Grid conv_block_bwd(ConvBlockParams& p, const ConvBlockCtx& ctx, const Grid& dy) {
    Tensor3 dnb = silu_bwd(ctx.nb, grid_to_tokens(dy));
    Tensor3 dcb = layernorm_bwd(p.ln_b, ctx.cb, dnb);
    Grid dsa = conv2d_bwd(p.conv_b, ctx.sa, tokens_to_grid(dcb, dy.h, dy.w));
    Tensor3 dna = silu_bwd(ctx.na, grid_to_tokens(dsa));
    Tensor3 dca = layernorm_bwd(p.ln_a, ctx.ca, dna);
    Grid dx = conv2d_bwd(p.conv_a, ctx.x, tokens_to_grid(dca, dy.h, dy.w));
    for (int64_t i = 0; i < dx.size(); ++i) dx.data[i] += dy.data[i];  // residual
    return dx;
}

TokenStageParams TokenStageParams::init(int64_t dim, int64_t n_mamba, int64_t n_attn,
                                        int64_t state_dim, int64_t heads, int64_t conv_k,
                                        int lanes, Rng& rng) {
    TokenStageParams p;
    for (int64_t i = 0; i < n_mamba; ++i) {
        p.mamba.push_back(MambaBlockParams::init(dim, state_dim, conv_k, lanes, rng));
    }
    for (int64_t i = 0; i < n_attn; ++i) {
        p.attn.push_back(AttnBlockParams::init(dim, heads, rng));
    }
    return p;
}

void TokenStageParams::collect(std::vector<ParamRef>& refs) {
    for (auto& b : mamba) b.collect(refs);
    for (auto& b : attn) b.collect(refs);
}

namespace {

int64_t resolve_b1(const ModelConfig& cfg, const std::optional<TuneLut>& lut, int64_t B,
                   int64_t stage_d, int64_t l_seg, std::vector<std::string>* warnings) {
    switch (cfg.fold) {
        case FoldPolicyKind::off:
            return B;
        case FoldPolicyKind::fixed:
            require(cfg.fold_b1 <= B && B % cfg.fold_b1 == 0,
                    "fold: fixed B1 must divide the batch size");
            return cfg.fold_b1;
        case FoldPolicyKind::adaptive: {
            if (!lut || lut->empty()) {
                if (warnings) {
                    warnings->push_back("adaptive fold: LUT missing or empty, folding disabled");
                }
                return B;
            }
            return lut_lookup(*lut, B, stage_d, cfg.state_dim, l_seg).b1;
        }
    }
    return B;
}

struct StageRunConfig {
    bool swap_aux;
    DiscardPolicy discard;
};

Tensor3 token_stage_fwd(const TokenStageParams& p, const Tensor3& x, const ModelConfig& cfg,
                        const std::optional<TuneLut>& lut, int64_t stage_d, bool training,
                        TokenStageCtx& ctx, std::vector<std::string>* warnings,
                        ThreadPool* pool) {
    const int64_t B = x.b;
    const int64_t T = x.t;
    ctx.orig_t = T;
    ctx.mamba.resize(p.mamba.size());
    ctx.attn.resize(p.attn.size());

    AuxState aux;
    aux.policy = cfg.discard;
    Tensor3 cur = x;
    int64_t l_seg = T;
    ctx.aux_used = false;
    if (cfg.swap_aux && !p.mamba.empty()) {
        cur = aux_init(cur, aux);
        l_seg = T + 2;
        ctx.aux_used = true;
    }

    const int64_t b1 = resolve_b1(cfg, lut, B, stage_d, l_seg, warnings);
    ctx.plan = FoldPlan::make(B, b1, l_seg);
    ctx.unfolded_plan = FoldPlan::none(B, l_seg);
    cur = fold(cur, ctx.plan);

    const size_t n_mamba = p.mamba.size();
    for (size_t i = 0; i < n_mamba; ++i) {
        cur = mamba_block_fwd(p.mamba[i], cur, ctx.plan, training, &ctx.mamba[i], pool);
        // the swap feeds the next Mamba block; none after the last
        if (ctx.aux_used && i + 1 < n_mamba) cur = aux_swap(cur, aux, ctx.plan);
    }

    cur = unfold(cur, ctx.plan);
    ctx.post_mamba_unfolded = cur;

    // discard scheduling: 0 = right after unfold, k >= 1 = after attn block k
    int64_t discard_point = -1;
    if (ctx.aux_used) {
        if (p.attn.empty() || cfg.discard == DiscardPolicy::before_attn) {
            discard_point = 0;
        } else if (cfg.discard == DiscardPolicy::after_first_attn) {
            discard_point = 1;
        } else {
            discard_point = static_cast<int64_t>(p.attn.size());
        }
    }
    ctx.discard_after_attn = discard_point;

    if (discard_point == 0) {
        auto [shrunk, plan2] = aux_discard(cur, aux, ctx.unfolded_plan);
        cur = std::move(shrunk);
    }
    for (size_t j = 0; j < p.attn.size(); ++j) {
        cur = attn_block_fwd(p.attn[j], cur, training, &ctx.attn[j]);
        if (discard_point == static_cast<int64_t>(j) + 1) {
            auto [shrunk, plan2] = aux_discard(cur, aux, ctx.unfolded_plan);
            cur = std::move(shrunk);
        }
    }
    require(!aux.present, "token stage: aux tokens must be discarded by stage end");
    require(cur.t == T, "token stage: output length must match input length");
    ctx.out = cur;
    return cur;
}

Tensor3 token_stage_bwd(TokenStageParams& p, TokenStageCtx& ctx, const Tensor3& dy,
                        bool from_post_mamba, ThreadPool* pool) {
    Tensor3 cur = dy;
    if (!from_post_mamba) {
        for (int64_t j = static_cast<int64_t>(p.attn.size()) - 1; j >= 0; --j) {
            if (ctx.discard_after_attn == j + 1) {
                cur = aux_discard_bwd(cur, ctx.unfolded_plan);
            }
            cur = attn_block_bwd(p.attn[static_cast<size_t>(j)],
                                 ctx.attn[static_cast<size_t>(j)], cur);
        }
        if (ctx.discard_after_attn == 0) cur = aux_discard_bwd(cur, ctx.unfolded_plan);
    }
    // unfold adjoint
    cur = fold(cur, ctx.plan);
    AuxState aux;
    aux.present = ctx.aux_used;
    const int64_t n_mamba = static_cast<int64_t>(p.mamba.size());
    for (int64_t i = n_mamba - 1; i >= 0; --i) {
        // the swap is a permutation, so its adjoint is the same swap
        if (ctx.aux_used && i + 1 < n_mamba) cur = aux_swap(cur, aux, ctx.plan);
        cur = mamba_block_bwd(p.mamba[static_cast<size_t>(i)],
                              ctx.mamba[static_cast<size_t>(i)], ctx.plan, cur, pool);
    }
    cur = unfold(cur, ctx.plan);
    if (ctx.aux_used) cur = aux_init_bwd(cur, ctx.orig_t);
    return cur;
}

}  // namespace

Model Model::build(const ModelConfig& cfg) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    Rng rng(cfg.seed);
    const int64_t d1 = cfg.stage_dim(0), d2 = cfg.stage_dim(1), d3 = cfg.stage_dim(2),
                  d4 = cfg.stage_dim(3);
    m.stem = Conv2dParams::init(cfg.in_channels, d1, 4, 4, 0, rng);
    for (int64_t i = 0; i < cfg.depths[0]; ++i) m.stage1.push_back(ConvBlockParams::init(d1, rng));
    m.down2 = Conv2dParams::init(d1, d2, 2, 2, 0, rng);
    for (int64_t i = 0; i < cfg.depths[1]; ++i) m.stage2.push_back(ConvBlockParams::init(d2, rng));
    m.down3 = Conv2dParams::init(d2, d3, 2, 2, 0, rng);
    m.stage3 = TokenStageParams::init(d3, cfg.depths[2] / 2, cfg.depths[2] / 2, cfg.state_dim,
                                      cfg.heads, cfg.conv_kernel, cfg.lanes, rng);
    m.down4 = Conv2dParams::init(d3, d4, 2, 2, 0, rng);
    m.stage4 = TokenStageParams::init(d4, cfg.depths[3] / 2, cfg.depths[3] / 2, cfg.state_dim,
                                      cfg.heads, cfg.conv_kernel, cfg.lanes, rng);
    m.head = LinearParams::init(cfg.classes, d4, rng);
    if (cfg.fold == FoldPolicyKind::adaptive && !cfg.lut_path.empty()) {
        m.lut = TuneLut::load(cfg.lut_path);
    }
    return m;
}

std::vector<ParamRef> Model::params() {
    std::vector<ParamRef> refs;
    stem.collect(refs);
    for (auto& b : stage1) b.collect(refs);
    down2.collect(refs);
    for (auto& b : stage2) b.collect(refs);
    down3.collect(refs);
    stage3.collect(refs);
    down4.collect(refs);
    stage4.collect(refs);
    head.collect(refs);
    return refs;
}

int64_t Model::param_count() {
    int64_t n = 0;
    for (auto& r : params()) n += static_cast<int64_t>(r.w->size());
    return n;
}

Mat model_forward(Model& m, const Grid& images, bool training, ModelCtx* ctx) {
    require(images.c == m.cfg.in_channels && images.h == m.cfg.image_size &&
                images.w == m.cfg.image_size,
            "model_forward: image batch does not match config");
    m.run_warnings.clear();
    ModelCtx local;
    ModelCtx& c = ctx ? *ctx : local;
    c.training = training;
    c.images = images;
    c.s1.resize(m.stage1.size());
    c.s2.resize(m.stage2.size());

    Grid g = conv2d_fwd(m.stem, images);
    c.stem_out = g;
    for (size_t i = 0; i < m.stage1.size(); ++i) g = conv_block_fwd(m.stage1[i], g, &c.s1[i]);
    c.down2_in = g;
    g = conv2d_fwd(m.down2, g);
    for (size_t i = 0; i < m.stage2.size(); ++i) g = conv_block_fwd(m.stage2[i], g, &c.s2[i]);
    c.down3_in = g;
    g = conv2d_fwd(m.down3, g);

    Tensor3 tok = grid_to_tokens(g);
    tok = token_stage_fwd(m.stage3, tok, m.cfg, m.lut, m.cfg.stage_dim(2), training, c.st3,
                          &m.run_warnings, nullptr);
    const int64_t g3 = m.cfg.stage_grid(2);
    c.down4_in = tokens_to_grid(tok, g3, g3);
    Grid g4 = conv2d_fwd(m.down4, c.down4_in);
    tok = grid_to_tokens(g4);
    tok = token_stage_fwd(m.stage4, tok, m.cfg, m.lut, m.cfg.stage_dim(3), training, c.st4,
                          &m.run_warnings, nullptr);
    c.pool_in = tok;

    // global average pool over the token axis
    Tensor3 pooled = seq_mean(tok);
    c.head_in = pooled;
    Tensor3 logits3 = linear_fwd(m.head, pooled);
    Mat logits(images.n, m.cfg.classes);
    for (int64_t ni = 0; ni < images.n; ++ni) {
        for (int64_t ci = 0; ci < m.cfg.classes; ++ci) {
            logits.at(ni, ci) = logits3.at(ni, ci, 0);
        }
    }
    return logits;
}

namespace {

// shared tail of the backward pass: stage-3 input tokens down to the images
Grid backward_below_stage3(Model& m, ModelCtx& ctx, const Tensor3& dtok3_in) {
    const int64_t g3 = m.cfg.stage_grid(2);
    Grid dg = tokens_to_grid(dtok3_in, g3, g3);
    dg = conv2d_bwd(m.down3, ctx.down3_in, dg);
    for (int64_t i = static_cast<int64_t>(m.stage2.size()) - 1; i >= 0; --i) {
        dg = conv_block_bwd(m.stage2[static_cast<size_t>(i)], ctx.s2[static_cast<size_t>(i)],
                            dg);
    }
    dg = conv2d_bwd(m.down2, ctx.down2_in, dg);
    for (int64_t i = static_cast<int64_t>(m.stage1.size()) - 1; i >= 0; --i) {
        dg = conv_block_bwd(m.stage1[static_cast<size_t>(i)], ctx.s1[static_cast<size_t>(i)],
                            dg);
    }
    return conv2d_bwd(m.stem, ctx.images, dg);
}

Grid backward_from_stage4(Model& m, ModelCtx& ctx, const Tensor3& dtok4) {
    Tensor3 dtok = token_stage_bwd(m.stage4, ctx.st4, dtok4, false, nullptr);
    const int64_t g4 = m.cfg.stage_grid(3);
    Grid dg4 = tokens_to_grid(dtok, g4, g4);
    Grid ddown4_in = conv2d_bwd(m.down4, ctx.down4_in, dg4);
    Tensor3 dtok3 = token_stage_bwd(m.stage3, ctx.st3, grid_to_tokens(ddown4_in), false,
                                    nullptr);
    return backward_below_stage3(m, ctx, dtok3);
}

}  // namespace

Grid model_backward(Model& m, ModelCtx& ctx, const Mat& dlogits) {
    require(ctx.training, "model_backward: forward pass was not run in training mode");
    const int64_t N = dlogits.rows;
    Tensor3 dl3(N, m.cfg.classes, 1);
    for (int64_t ni = 0; ni < N; ++ni) {
        for (int64_t ci = 0; ci < m.cfg.classes; ++ci) dl3.at(ni, ci, 0) = dlogits.at(ni, ci);
    }
    Tensor3 dpooled = linear_bwd(m.head, ctx.head_in, dl3);
    // pool adjoint: broadcast / T
    Tensor3 dtok4(ctx.pool_in.b, ctx.pool_in.d, ctx.pool_in.t);
    const double inv_t = 1.0 / static_cast<double>(ctx.pool_in.t);
    for (int64_t bi = 0; bi < dtok4.b; ++bi) {
        for (int64_t di = 0; di < dtok4.d; ++di) {
            const double g = dpooled.at(bi, di, 0) * inv_t;
            double* row = dtok4.row(bi, di);
            for (int64_t ti = 0; ti < dtok4.t; ++ti) row[ti] = g;
        }
    }
    return backward_from_stage4(m, ctx, dtok4);
}

const Tensor3& cut_features(const ModelCtx& ctx, ErfCut cut) {
    return cut == ErfCut::stage3_mamba ? ctx.st3.post_mamba_unfolded : ctx.st4.out;
}

CutGeometry cut_geometry(const Model& m, const ModelCtx& ctx, ErfCut cut) {
    CutGeometry g;
    if (cut == ErfCut::stage3_mamba) {
        g.h = g.w = m.cfg.stage_grid(2);
        g.aux_offset = ctx.st3.aux_used ? 1 : 0;
    } else {
        g.h = g.w = m.cfg.stage_grid(3);
        g.aux_offset = 0;  // aux discarded by stage end
    }
    return g;
}

Grid model_backward_from_cut(Model& m, ModelCtx& ctx, ErfCut cut, const Tensor3& dfeat) {
    require(ctx.training, "model_backward_from_cut: forward pass was not in training mode");
    if (cut == ErfCut::full) {
        require(dfeat.same_shape(ctx.st4.out), "erf: seed gradient shape mismatch");
        return backward_from_stage4(m, ctx, dfeat);
    }
    require(dfeat.same_shape(ctx.st3.post_mamba_unfolded), "erf: seed gradient shape mismatch");
    Tensor3 dtok3 = token_stage_bwd(m.stage3, ctx.st3, dfeat, true, nullptr);
    return backward_below_stage3(m, ctx, dtok3);
}

Mat erf_map(Model& m, const Grid& probes, ErfCut cut) {
    if (cut == ErfCut::stage3_mamba) {
        require(!m.stage3.mamba.empty(), "erf: stage-3 cut needs at least one Mamba block");
    }
    ModelCtx ctx;
    model_forward(m, probes, /*training=*/true, &ctx);
    const Tensor3& feat = cut_features(ctx, cut);
    const CutGeometry geo = cut_geometry(m, ctx, cut);
    const int64_t center = geo.aux_offset + (geo.h / 2) * geo.w + geo.w / 2;
    Tensor3 dfeat(feat.b, feat.d, feat.t);
    for (int64_t bi = 0; bi < feat.b; ++bi) {
        for (int64_t di = 0; di < feat.d; ++di) dfeat.at(bi, di, center) = 1.0;
    }
    Grid dimg = model_backward_from_cut(m, ctx, cut, dfeat);
    Mat heat(probes.h, probes.w);
    const double inv_n = 1.0 / static_cast<double>(probes.n);
    for (int64_t ni = 0; ni < probes.n; ++ni) {
        for (int64_t ci = 0; ci < probes.c; ++ci) {
            for (int64_t yi = 0; yi < probes.h; ++yi) {
                for (int64_t xi = 0; xi < probes.w; ++xi) {
                    const double g = dimg.at(ni, ci, yi, xi);
                    heat.at(yi, xi) += g * g * inv_n;
                }
            }
        }
    }
    return heat;
}

// ---- toy task ---------------------------------------------------------------

ToyTask ToyTask::parse(const std::string& spec) {
    ToyTask t;
    std::istringstream is(spec);
    std::string item;
    while (std::getline(is, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        const size_t eq = item.find('=');
        require(eq != std::string::npos, "ToyTask: expected key=value: " + item);
        const std::string key = trim(item.substr(0, eq));
        const std::string val = trim(item.substr(eq + 1));
        if (key == "grid") t.grid = std::stoll(val);
        else if (key == "patch_dim") t.patch_dim = std::stoll(val);
        else if (key == "classes") t.classes = std::stoll(val);
        else if (key == "cue_pos") t.cue_pos = std::stoll(val);
        else if (key == "cue") t.cue_strength = std::stod(val);
        else if (key == "noise") t.noise = std::stod(val);
        else if (key == "seed") t.seed = std::stoull(val);
        else throw std::invalid_argument("ToyTask: unknown key: " + key);
    }
    require(t.grid >= 2, "ToyTask: grid must be >= 2");
    require(t.classes >= 2 && t.classes <= t.patch_dim,
            "ToyTask: classes must be in [2, patch_dim]");
    require(t.cue_pos == -1 || (t.cue_pos >= 0 && t.cue_pos < t.tokens()),
            "ToyTask: cue_pos out of range");
    return t;
}

std::string ToyTask::describe() const {
    std::ostringstream os;
    os << "grid=" << grid << ",patch_dim=" << patch_dim << ",classes=" << classes
       << ",cue_pos=" << cue_pos << ",cue=" << cue_strength << ",noise=" << noise
       << ",seed=" << seed;
    return os.str();
}

ToyBatch sample_toy(const ToyTask& task, int64_t n, Rng& rng) {
    ToyBatch batch;
    batch.tokens = Tensor3(n, task.patch_dim, task.tokens());
    batch.labels.resize(static_cast<size_t>(n));
    const int64_t cue = task.cue_pos < 0 ? task.tokens() - 1 : task.cue_pos;
    for (int64_t ni = 0; ni < n; ++ni) {
        const int label = static_cast<int>(rng.integer(0, task.classes - 1));
        batch.labels[static_cast<size_t>(ni)] = label;
        for (int64_t di = 0; di < task.patch_dim; ++di) {
            double* row = batch.tokens.row(ni, di);
            for (int64_t ti = 0; ti < task.tokens(); ++ti) {
                row[ti] = rng.normal(0.0, task.noise);
            }
            // the cue patch is the only label-dependent input
            row[cue] = di == label ? task.cue_strength : 0.0;
        }
    }
    return batch;
}

ToyModel ToyModel::build(const ToyConfig& cfg, const ToyTask& task) {
    require(cfg.depth >= 1, "ToyModel: depth must be >= 1");
    ToyModel m;
    m.cfg = cfg;
    m.task = task;
    Rng rng(cfg.seed);
    m.embed = LinearParams::init(cfg.dim, task.patch_dim, rng);
    for (int64_t i = 0; i < cfg.depth; ++i) {
        m.blocks.push_back(
            MambaBlockParams::init(cfg.dim, cfg.state_dim, cfg.conv_kernel, cfg.lanes, rng));
    }
    m.ln_f = LayerNormParams::init(cfg.dim);
    m.head = LinearParams::init(task.classes, cfg.dim, rng);
    return m;
}

std::vector<ParamRef> ToyModel::params() {
    std::vector<ParamRef> refs;
    embed.collect(refs);
    for (auto& b : blocks) b.collect(refs);
    ln_f.collect(refs);
    head.collect(refs);
    return refs;
}

Mat toy_forward(ToyModel& m, const Tensor3& tokens, bool training, ToyCtx* ctx,
                ThreadPool* pool) {
    require(tokens.d == m.task.patch_dim, "toy_forward: patch dim mismatch");
    ToyCtx local;
    ToyCtx& c = ctx ? *ctx : local;
    c.tokens = tokens;
    c.blocks.resize(m.blocks.size());

    Tensor3 cur = linear_fwd(m.embed, tokens);
    c.emb = cur;
    AuxState aux;
    int64_t l_seg = cur.t;
    c.aux_used = false;
    if (m.cfg.swap_aux) {
        cur = aux_init(cur, aux);
        l_seg += 2;
        c.aux_used = true;
    }
    int64_t b1 = tokens.b;
    if (m.cfg.fold == FoldPolicyKind::fixed) {
        require(m.cfg.fold_b1 >= 1 && tokens.b % m.cfg.fold_b1 == 0,
                "toy fold: fixed B1 must divide the batch size");
        b1 = m.cfg.fold_b1;
    } else if (m.cfg.fold == FoldPolicyKind::adaptive && m.lut && !m.lut->empty()) {
        b1 = lut_lookup(*m.lut, tokens.b, m.cfg.dim, m.cfg.state_dim, l_seg).b1;
    }
    c.plan = FoldPlan::make(tokens.b, b1, l_seg);
    c.unfolded_plan = FoldPlan::none(tokens.b, l_seg);
    cur = fold(cur, c.plan);
    const size_t n = m.blocks.size();
    for (size_t i = 0; i < n; ++i) {
        cur = mamba_block_fwd(m.blocks[i], cur, c.plan, training, &c.blocks[i], pool);
        if (c.aux_used && i + 1 < n) cur = aux_swap(cur, aux, c.plan);
    }
    cur = unfold(cur, c.plan);
    if (c.aux_used) {
        auto [shrunk, plan2] = aux_discard(cur, aux, c.unfolded_plan);
        cur = std::move(shrunk);
    }
    c.final_tokens = cur;

    // readout at the first patch token
    Tensor3 readout(cur.b, cur.d, 1);
    for (int64_t bi = 0; bi < cur.b; ++bi) {
        for (int64_t di = 0; di < cur.d; ++di) readout.at(bi, di, 0) = cur.at(bi, di, 0);
    }
    c.readout = readout;
    Tensor3 normed = layernorm_fwd(m.ln_f, readout);
    c.normed = normed;
    Tensor3 logits3 = linear_fwd(m.head, normed);
    Mat logits(tokens.b, m.task.classes);
    for (int64_t ni = 0; ni < tokens.b; ++ni) {
        for (int64_t ci = 0; ci < m.task.classes; ++ci) {
            logits.at(ni, ci) = logits3.at(ni, ci, 0);
        }
    }
    return logits;
}

Tensor3 toy_backward(ToyModel& m, ToyCtx& ctx, const Mat& dlogits, ThreadPool* pool) {
    const int64_t N = dlogits.rows;
    Tensor3 dl3(N, m.task.classes, 1);
    for (int64_t ni = 0; ni < N; ++ni) {
        for (int64_t ci = 0; ci < m.task.classes; ++ci) dl3.at(ni, ci, 0) = dlogits.at(ni, ci);
    }
    Tensor3 dnormed = linear_bwd(m.head, ctx.normed, dl3);
    Tensor3 dreadout = layernorm_bwd(m.ln_f, ctx.readout, dnormed);
    Tensor3 dcur(ctx.final_tokens.b, ctx.final_tokens.d, ctx.final_tokens.t);
    for (int64_t bi = 0; bi < dcur.b; ++bi) {
        for (int64_t di = 0; di < dcur.d; ++di) dcur.at(bi, di, 0) = dreadout.at(bi, di, 0);
    }
    if (ctx.aux_used) dcur = aux_discard_bwd(dcur, ctx.unfolded_plan);
    dcur = fold(dcur, ctx.plan);  // unfold adjoint
    AuxState aux;
    aux.present = ctx.aux_used;
    const int64_t n = static_cast<int64_t>(m.blocks.size());
    for (int64_t i = n - 1; i >= 0; --i) {
        if (ctx.aux_used && i + 1 < n) dcur = aux_swap(dcur, aux, ctx.plan);
        dcur = mamba_block_bwd(m.blocks[static_cast<size_t>(i)],
                               ctx.blocks[static_cast<size_t>(i)], ctx.plan, dcur, pool);
    }
    dcur = unfold(dcur, ctx.plan);  // fold adjoint
    if (ctx.aux_used) dcur = aux_init_bwd(dcur, ctx.emb.t);
    return linear_bwd(m.embed, ctx.tokens, dcur);
}

TrainResult train_toy(ToyModel& m, const ToyTask& task, const TrainOptions& opts,
                      ThreadPool* pool) {
    require(opts.batch >= 1 && opts.eval_n >= 1, "train_toy: batch sizes must be >= 1");
    require(opts.steps >= 0, "train_toy: steps must be >= 0");
    TrainResult res;
    Rng data_rng(opts.seed);
    Rng eval_rng(task.seed ^ 0xe7a1u);
    const ToyBatch eval_set = sample_toy(task, opts.eval_n, eval_rng);
    auto params = m.params();

    auto evaluate = [&]() {
        Mat logits = toy_forward(m, eval_set.tokens, false, nullptr, pool);
        int64_t correct = 0;
        for (int64_t i = 0; i < logits.rows; ++i) {
            int64_t best = 0;
            for (int64_t c2 = 1; c2 < logits.cols; ++c2) {
                if (logits.at(i, c2) > logits.at(i, best)) best = c2;
            }
            if (best == eval_set.labels[static_cast<size_t>(i)]) ++correct;
        }
        return static_cast<double>(correct) / static_cast<double>(logits.rows);
    };

    if (opts.steps == 0) {
        TrainRow row;
        row.step = 0;
        Mat logits = toy_forward(m, eval_set.tokens, false, nullptr, pool);
        row.loss = cross_entropy(logits, eval_set.labels, nullptr);
        row.acc = row.eval_acc = evaluate();
        res.trace.push_back(row);
        res.final_eval_acc = res.best_eval_acc = row.eval_acc;
        return res;
    }

    for (int64_t step = 1; step <= opts.steps; ++step) {
        ToyBatch batch = sample_toy(task, opts.batch, data_rng);
        ToyCtx ctx;
        Mat logits;
        try {
            logits = toy_forward(m, batch.tokens, true, &ctx, pool);
        } catch (const std::exception& e) {
            // non-finite activations surface here before the loss does
            throw std::runtime_error("train_toy: diverged at step " + std::to_string(step) +
                                     " (" + e.what() + ")");
        }
        Mat dlogits;
        const double loss = cross_entropy(logits, batch.labels, &dlogits);
        if (!std::isfinite(loss)) {
            throw std::runtime_error("train_toy: loss diverged (NaN/Inf) at step " +
                                     std::to_string(step));
        }
        int64_t correct = 0;
        for (int64_t i = 0; i < logits.rows; ++i) {
            int64_t best = 0;
            for (int64_t c2 = 1; c2 < logits.cols; ++c2) {
                if (logits.at(i, c2) > logits.at(i, best)) best = c2;
            }
            if (best == batch.labels[static_cast<size_t>(i)]) ++correct;
        }
        zero_grads(params);
        toy_backward(m, ctx, dlogits, pool);
        sgd_step(params, opts.lr);

        TrainRow row;
        row.step = step;
        row.loss = loss;
        row.acc = static_cast<double>(correct) / static_cast<double>(logits.rows);
        if (step % opts.eval_every == 0 || step == opts.steps) {
            row.eval_acc = evaluate();
            res.best_eval_acc = std::max(res.best_eval_acc, row.eval_acc);
            res.final_eval_acc = row.eval_acc;
        }
        res.trace.push_back(row);
        if (opts.stop_at_eval_acc > 0.0 && row.eval_acc >= opts.stop_at_eval_acc) break;
    }
    return res;
}

}  // namespace sfm
