#include "irdseg/mtl_net.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "irdseg/conv.hpp"
#include "irdseg/errors.hpp"
#include "irdseg/parallel.hpp"
#include "irdseg/prng.hpp"

namespace irdseg {

std::string to_string(ConvMode mode) {
    switch (mode) {
        case ConvMode::standard: return "standard";
        case ConvMode::shape: return "shape";
        case ConvMode::depth_aware: return "depth-aware";
        case ConvMode::da_shape: return "da-shape";
    }
    return "standard";
}

ConvMode conv_mode_from_string(const std::string& name) {
    if (name == "standard") return ConvMode::standard;
    if (name == "shape") return ConvMode::shape;
    if (name == "depth-aware") return ConvMode::depth_aware;
    if (name == "da-shape") return ConvMode::da_shape;
    throw ConfigError("unknown conv_mode '" + name + "'");
}

void NetworkConfig::validate() const {
    if (in_channels == 0) throw ConfigError("network: in_channels must be >= 1");
    if (n_classes < 2) throw ConfigError("network: n_classes must be >= 2");
    if (encoder_channels.empty()) throw ConfigError("network: encoder_channels must be nonempty");
    for (std::size_t c : encoder_channels) {
        if (c == 0) throw ConfigError("network: encoder channels must be positive");
    }
    if (kernel_size == 0 || kernel_size % 2 == 0) {
        throw ConfigError("network: kernel_size must be odd");
    }
    if (alpha < 0.0) throw ConfigError("network: alpha must be >= 0");
}

std::string serialize_network_config(const NetworkConfig& c) {
    std::ostringstream out;
    out << "in_channels = " << c.in_channels << "\n";
    out << "n_classes = " << c.n_classes << "\n";
    out << "encoder_channels = [";
    for (std::size_t i = 0; i < c.encoder_channels.size(); ++i) {
        out << (i ? ", " : "") << c.encoder_channels[i];
    }
    out << "]\n";
    out << "kernel_size = " << c.kernel_size << "\n";
    out << "conv_mode = \"" << to_string(c.conv_mode) << "\"\n";
    char alpha_buf[40];
    std::snprintf(alpha_buf, sizeof(alpha_buf), "%.17g", c.alpha);
    out << "alpha = " << alpha_buf << "\n";
    out << "seed = " << c.seed << "\n";
    return out.str();
}

NetworkConfig parse_network_config(const std::string& text) {
    NetworkConfig c;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("network config: bad line '" + line + "'");
        auto trim = [](std::string s) {
            const std::size_t a = s.find_first_not_of(" \t");
            const std::size_t b = s.find_last_not_of(" \t");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        try {
            if (key == "in_channels") c.in_channels = std::stoul(value);
            else if (key == "n_classes") c.n_classes = std::stoul(value);
            else if (key == "kernel_size") c.kernel_size = std::stoul(value);
            else if (key == "alpha") c.alpha = std::stod(value);
            else if (key == "seed") c.seed = std::stoull(value);
            else if (key == "conv_mode") {
                std::string v = value;
                if (v.size() >= 2 && v.front() == '"' && v.back() == '"') {
                    v = v.substr(1, v.size() - 2);
                }
                c.conv_mode = conv_mode_from_string(v);
            } else if (key == "encoder_channels") {
                if (value.size() < 2 || value.front() != '[' || value.back() != ']') {
                    throw ConfigError("network config: encoder_channels must be a list");
                }
                c.encoder_channels.clear();
                std::istringstream items(value.substr(1, value.size() - 2));
                std::string item;
                while (std::getline(items, item, ',')) {
                    c.encoder_channels.push_back(std::stoul(trim(item)));
                }
            } else {
                throw ConfigError("network config: unknown key '" + key + "'");
            }
        } catch (const ConfigError&) {
            throw;
        } catch (...) {
            throw ConfigError("network config: bad value for '" + key + "'");
        }
    }
    c.validate();
    return c;
}

namespace {

ConvLayer make_layer(Prng& rng, std::size_t kernel, std::size_t cin, std::size_t cout,
                     bool shape_composed, bool depth_guided, double alpha) {
    ConvLayer layer;
    layer.geom = ConvGeometry(kernel, kernel, 1, kernel / 2, cin, cout);
    const double fan_in = static_cast<double>(kernel * kernel * cin);
    layer.params.kernel =
        Tensor::random_normal({kernel, kernel, cin, cout}, rng, 0.0, std::sqrt(1.0 / fan_in));
    layer.params.alpha = alpha;
    layer.shape_composed = shape_composed;
    layer.depth_guided = depth_guided;
    if (shape_composed) {
        const std::size_t d = kernel * kernel;
        layer.params.w_base = Tensor::full({cin, cout}, 1.0);
        layer.params.w_shape = Tensor({d, d});
        for (std::size_t i = 0; i < d; ++i) layer.params.w_shape.at(i, i) = 1.0;
    }
    return layer;
}

std::size_t below_channels(const NetworkConfig& c, std::size_t stage) {
    return stage + 1 == c.encoder_depth() ? c.encoder_channels[stage]
                                          : c.encoder_channels[stage + 1];
}

}  // namespace

Model build_model(const NetworkConfig& config) {
    config.validate();
    Model m;
    m.config = config;
    Prng rng(config.seed);
    const bool shaped =
        config.conv_mode == ConvMode::shape || config.conv_mode == ConvMode::da_shape;
    const bool guided =
        config.conv_mode == ConvMode::depth_aware || config.conv_mode == ConvMode::da_shape;

    std::size_t cin = config.in_channels;
    for (std::size_t ch : config.encoder_channels) {
        m.encoder.push_back(make_layer(rng, config.kernel_size, cin, ch, shaped, guided,
                                       config.alpha));
        cin = ch;
    }
    const std::size_t depth = config.encoder_depth();
    // Each decoder stage is a two-conv stack on the upsample+skip concat.
    auto make_decoder = [&](std::vector<ConvLayer>& stack) {
        for (std::size_t i = 0; i < depth; ++i) {
            const std::size_t ch = config.encoder_channels[i];
            const std::size_t in_ch = below_channels(config, i) + ch;
            stack.push_back(make_layer(rng, config.kernel_size, in_ch, ch, false, false, 0.0));
            stack.push_back(make_layer(rng, config.kernel_size, ch, ch, false, false, 0.0));
        }
    };
    make_decoder(m.seg_decoder);
    // Task heads start at zero (uniform class scores, softplus(offset) depth);
    // make_layer still draws so the stream stays aligned across modes.
    m.seg_head = make_layer(rng, config.kernel_size, config.encoder_channels[0],
                            config.n_classes, false, false, 0.0);
    m.seg_head.params.kernel.fill(0.0);
    make_decoder(m.depth_decoder);
    m.depth_head = make_layer(rng, config.kernel_size, config.encoder_channels[0], 1, false,
                              false, 0.0);
    m.depth_head.params.kernel.fill(0.0);
    return m;
}

namespace {

template <typename Fn>
void visit_params(const Model& m, Fn&& fn) {
    auto layer_params = [&](const std::string& prefix, const ConvLayer& layer) {
        fn(prefix + ".kernel", layer.params.kernel);
        if (layer.shape_composed) {
            fn(prefix + ".w_base", layer.params.w_base);
            fn(prefix + ".w_shape", layer.params.w_shape);
        }
    };
    auto stage_name = [](const char* prefix, std::size_t flat) {
        return std::string(prefix) + std::to_string(flat / 2) + "_" + std::to_string(flat % 2);
    };
    for (std::size_t i = 0; i < m.encoder.size(); ++i) {
        layer_params("enc" + std::to_string(i), m.encoder[i]);
    }
    for (std::size_t i = 0; i < m.seg_decoder.size(); ++i) {
        layer_params(stage_name("seg_dec", i), m.seg_decoder[i]);
    }
    layer_params("seg_head", m.seg_head);
    for (std::size_t i = 0; i < m.depth_decoder.size(); ++i) {
        layer_params(stage_name("depth_dec", i), m.depth_decoder[i]);
    }
    layer_params("depth_head", m.depth_head);
}

}  // namespace

std::vector<ParamRef> parameters(Model& model) {
    std::vector<ParamRef> refs;
    visit_params(model, [&](const std::string& name, const Tensor& t) {
        refs.push_back({name, const_cast<Tensor*>(&t)});
    });
    return refs;
}

std::size_t count_params(const Model& model) {
    std::size_t n = 0;
    visit_params(model, [&](const std::string&, const Tensor& t) { n += t.size(); });
    return n;
}

namespace {

// Leaky rectifier: a starved unit keeps a trickle of gradient instead of
// dying outright.
constexpr double kLeakSlope = 0.01;

Tensor relu(const Tensor& x) {
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : kLeakSlope * x[i];
    return y;
}

Tensor relu_backward(const Tensor& pre, const Tensor& grad) {
    Tensor g(pre.shape());
    for (std::size_t i = 0; i < pre.size(); ++i) {
        g[i] = pre[i] > 0.0 ? grad[i] : kLeakSlope * grad[i];
    }
    return g;
}

Tensor avgpool2(const Tensor& x) {
    const std::size_t h = x.extent(0), w = x.extent(1), c = x.extent(2);
    Tensor y({h / 2, w / 2, c});
    for (std::size_t oy = 0; oy < h / 2; ++oy) {
        for (std::size_t ox = 0; ox < w / 2; ++ox) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                y.at(oy, ox, ch) = 0.25 * (x.at(2 * oy, 2 * ox, ch) + x.at(2 * oy, 2 * ox + 1, ch) +
                                           x.at(2 * oy + 1, 2 * ox, ch) +
                                           x.at(2 * oy + 1, 2 * ox + 1, ch));
            }
        }
    }
    return y;
}

Tensor avgpool2_backward(const Tensor& grad, std::size_t in_h, std::size_t in_w) {
    const std::size_t c = grad.extent(2);
    Tensor g({in_h, in_w, c});
    for (std::size_t oy = 0; oy < grad.extent(0); ++oy) {
        for (std::size_t ox = 0; ox < grad.extent(1); ++ox) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double v = 0.25 * grad.at(oy, ox, ch);
                g.at(2 * oy, 2 * ox, ch) = v;
                g.at(2 * oy, 2 * ox + 1, ch) = v;
                g.at(2 * oy + 1, 2 * ox, ch) = v;
                g.at(2 * oy + 1, 2 * ox + 1, ch) = v;
            }
        }
    }
    return g;
}

Tensor upsample2(const Tensor& x) {
    const std::size_t h = x.extent(0), w = x.extent(1), c = x.extent(2);
    Tensor y({h * 2, w * 2, c});
    for (std::size_t oy = 0; oy < 2 * h; ++oy) {
        for (std::size_t ox = 0; ox < 2 * w; ++ox) {
            const double* src = x.data() + ((oy / 2) * w + ox / 2) * c;
            double* dst = y.data() + (oy * 2 * w + ox) * c;
            for (std::size_t ch = 0; ch < c; ++ch) dst[ch] = src[ch];
        }
    }
    return y;
}

Tensor upsample2_backward(const Tensor& grad) {
    const std::size_t h = grad.extent(0) / 2, w = grad.extent(1) / 2, c = grad.extent(2);
    Tensor g({h, w, c});
    for (std::size_t oy = 0; oy < 2 * h; ++oy) {
        for (std::size_t ox = 0; ox < 2 * w; ++ox) {
            const double* src = grad.data() + (oy * 2 * w + ox) * c;
            double* dst = g.data() + ((oy / 2) * w + ox / 2) * c;
            for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src[ch];
        }
    }
    return g;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    const std::size_t h = a.extent(0), w = a.extent(1);
    const std::size_t ca = a.extent(2), cb = b.extent(2);
    Tensor y({h, w, ca + cb});
    for (std::size_t p = 0; p < h * w; ++p) {
        double* dst = y.data() + p * (ca + cb);
        const double* pa = a.data() + p * ca;
        const double* pb = b.data() + p * cb;
        for (std::size_t ch = 0; ch < ca; ++ch) dst[ch] = pa[ch];
        for (std::size_t ch = 0; ch < cb; ++ch) dst[ca + ch] = pb[ch];
    }
    return y;
}

void split_channels(const Tensor& grad, std::size_t ca, Tensor& ga, Tensor& gb) {
    const std::size_t h = grad.extent(0), w = grad.extent(1), c = grad.extent(2);
    const std::size_t cb = c - ca;
    ga = Tensor({h, w, ca});
    gb = Tensor({h, w, cb});
    for (std::size_t p = 0; p < h * w; ++p) {
        const double* src = grad.data() + p * c;
        double* pa = ga.data() + p * ca;
        double* pb = gb.data() + p * cb;
        for (std::size_t ch = 0; ch < ca; ++ch) pa[ch] = src[ch];
        for (std::size_t ch = 0; ch < cb; ++ch) pb[ch] = src[ca + ch];
    }
}

double softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

Tensor encoder_layer_forward(const ConvLayer& layer, const Tensor& input,
                             const DepthGuidance& guide) {
    if (layer.shape_composed && layer.depth_guided) {
        return da_shape_conv_forward(input, layer.params, guide, layer.geom);
    }
    if (layer.shape_composed) {
        return shape_conv_forward(input, layer.params, layer.geom);
    }
    if (layer.depth_guided) {
        return depth_aware_conv_forward(input, layer.params.kernel, guide, layer.params.alpha,
                                        layer.geom);
    }
    return conv2d(input, layer.params.kernel, layer.geom);
}

struct TaskCache {
    std::vector<Tensor> cat;    // first-conv inputs (upsample+skip), by stage
    std::vector<Tensor> pre_a;  // first-conv pre-activations
    std::vector<Tensor> mid;    // activations between the two convs
    std::vector<Tensor> pre_b;  // second-conv pre-activations
    Tensor head_in;
    Tensor head_pre;
};

struct ForwardCache {
    std::vector<Tensor> enc_in;
    std::vector<Tensor> enc_pre;
    std::vector<Tensor> enc_act;
    std::vector<DepthGuidance> stage_guide;
    Tensor bottom;  // pooled output of the last encoder block
    TaskCache seg;
    TaskCache depth;
};

void decoder_forward(const Model& m, const std::vector<ConvLayer>& decoder,
                     const ConvLayer& head, const ForwardCache& cache, TaskCache& task) {
    const std::size_t depth = m.config.encoder_depth();
    task.cat.resize(depth);
    task.pre_a.resize(depth);
    task.mid.resize(depth);
    task.pre_b.resize(depth);
    Tensor below = cache.bottom;
    for (std::size_t step = 0; step < depth; ++step) {
        const std::size_t i = depth - 1 - step;
        const ConvLayer& a = decoder[2 * i];
        const ConvLayer& b = decoder[2 * i + 1];
        const Tensor up = upsample2(below);
        task.cat[i] = concat_channels(up, cache.enc_act[i]);
        task.pre_a[i] = conv2d(task.cat[i], a.params.kernel, a.geom);
        task.mid[i] = relu(task.pre_a[i]);
        task.pre_b[i] = conv2d(task.mid[i], b.params.kernel, b.geom);
        below = relu(task.pre_b[i]);
    }
    task.head_in = std::move(below);
    task.head_pre = conv2d(task.head_in, head.params.kernel, head.geom);
}

ForwardResult forward_impl(const Model& m, const Tensor& input, const DepthGuidance& guide,
                           ForwardCache& cache) {
    const NetworkConfig& c = m.config;
    if (input.rank() != 3 || input.extent(2) != c.in_channels) {
        throw std::invalid_argument("forward: input must be H x W x in_channels");
    }
    const std::size_t depth = c.encoder_depth();
    const std::size_t div = std::size_t{1} << depth;
    if (input.extent(0) % div != 0 || input.extent(1) % div != 0) {
        throw std::invalid_argument("forward: spatial size must divide 2^encoder_depth");
    }
    if (guide.depth.rank() != 2 || guide.depth.extent(0) != input.extent(0) ||
        guide.depth.extent(1) != input.extent(1)) {
        throw std::invalid_argument("forward: guidance extent mismatch input");
    }

    const std::vector<Tensor> chain = guidance_chain(guide.depth, depth);
    cache.enc_in.resize(depth);
    cache.enc_pre.resize(depth);
    cache.enc_act.resize(depth);
    cache.stage_guide.resize(depth);

    Tensor x = input;
    for (std::size_t i = 0; i < depth; ++i) {
        cache.stage_guide[i] = DepthGuidance::from_depth(chain[i]);
        cache.enc_in[i] = std::move(x);
        cache.enc_pre[i] = encoder_layer_forward(m.encoder[i], cache.enc_in[i],
                                                 cache.stage_guide[i]);
        cache.enc_act[i] = relu(cache.enc_pre[i]);
        x = avgpool2(cache.enc_act[i]);
    }
    cache.bottom = std::move(x);

    decoder_forward(m, m.seg_decoder, m.seg_head, cache, cache.seg);
    decoder_forward(m, m.depth_decoder, m.depth_head, cache, cache.depth);

    ForwardResult out;
    out.seg_logits = cache.seg.head_pre;
    const Tensor& dp = cache.depth.head_pre;
    out.dense_depth = Tensor({dp.extent(0), dp.extent(1)});
    for (std::size_t i = 0; i < out.dense_depth.size(); ++i) {
        out.dense_depth[i] = softplus(dp[i] + kDepthHeadOffset);
    }
    return out;
}

struct GradSink {
    std::vector<Tensor>* grads;
    std::size_t index = 0;

    void add(const Tensor& g) {
        Tensor& acc = (*grads)[index++];
        if (acc.size() == 0) {
            acc = g;
        } else {
            for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
        }
    }
    void add_layer(const ConvLayer& layer, const Tensor& gk, const Tensor* gwb,
                   const Tensor* gws) {
        add(gk);
        if (layer.shape_composed) {
            add(*gwb);
            add(*gws);
        }
    }
};

// Backwards one decoder (stages 0..L-1 in that order), accumulating skip
// gradients into grad_enc_act and returning the gradient at the shared
// bottom feature.
Tensor decoder_backward(const Model& m, const std::vector<ConvLayer>& decoder,
                        const ConvLayer& head, const TaskCache& task,
                        const Tensor& grad_head_pre, std::vector<Tensor>& grad_enc_act,
                        GradSink& dec_sink, GradSink& head_sink) {
    const std::size_t depth = m.config.encoder_depth();
    Conv2dGrads hb = conv2d_backward(task.head_in, head.params.kernel, head.geom, grad_head_pre);
    head_sink.add_layer(head, hb.kernel, nullptr, nullptr);

    Tensor grad_below = std::move(hb.input);
    for (std::size_t i = 0; i < depth; ++i) {
        const ConvLayer& a = decoder[2 * i];
        const ConvLayer& b = decoder[2 * i + 1];
        const Tensor grad_pre_b = relu_backward(task.pre_b[i], grad_below);
        Conv2dGrads gb = conv2d_backward(task.mid[i], b.params.kernel, b.geom, grad_pre_b);
        const Tensor grad_pre_a = relu_backward(task.pre_a[i], gb.input);
        Conv2dGrads ga = conv2d_backward(task.cat[i], a.params.kernel, a.geom, grad_pre_a);
        dec_sink.add(ga.kernel);
        dec_sink.add(gb.kernel);
        const std::size_t up_ch = below_channels(m.config, i);
        Tensor grad_up, grad_skip;
        split_channels(ga.input, up_ch, grad_up, grad_skip);
        for (std::size_t p = 0; p < grad_skip.size(); ++p) grad_enc_act[i][p] += grad_skip[p];
        grad_below = upsample2_backward(grad_up);
    }
    return grad_below;  // gradient at cache.bottom
}

// Gradient slot layout must match visit_params order exactly.
struct GradLayout {
    std::size_t enc_begin = 0;
    std::size_t seg_dec_begin = 0;
    std::size_t seg_head_begin = 0;
    std::size_t depth_dec_begin = 0;
    std::size_t depth_head_begin = 0;
    std::size_t total = 0;
};

GradLayout grad_layout(const Model& m) {
    GradLayout l;
    const std::size_t per_enc = m.encoder.front().shape_composed ? 3 : 1;
    l.enc_begin = 0;
    l.seg_dec_begin = l.enc_begin + per_enc * m.encoder.size();
    l.seg_head_begin = l.seg_dec_begin + m.seg_decoder.size();
    l.depth_dec_begin = l.seg_head_begin + 1;
    l.depth_head_begin = l.depth_dec_begin + m.depth_decoder.size();
    l.total = l.depth_head_begin + 1;
    return l;
}

void backward_impl(const Model& m, const ForwardCache& cache, const Tensor& grad_seg_logits,
                   const Tensor& grad_dense_depth, std::vector<Tensor>& grads) {
    const std::size_t depth = m.config.encoder_depth();
    const GradLayout layout = grad_layout(m);
    grads.assign(layout.total, Tensor());

    // dL/d(head_pre) for the depth task passes through the softplus
    const Tensor& dp = cache.depth.head_pre;
    Tensor grad_depth_pre({dp.extent(0), dp.extent(1), 1});
    for (std::size_t i = 0; i < dp.size(); ++i) {
        grad_depth_pre[i] = grad_dense_depth[i] * sigmoid(dp[i] + kDepthHeadOffset);
    }

    std::vector<Tensor> grad_enc_act(depth);
    for (std::size_t i = 0; i < depth; ++i) grad_enc_act[i] = Tensor(cache.enc_act[i].shape());

    GradSink seg_dec_sink{&grads, layout.seg_dec_begin};
    GradSink seg_head_sink{&grads, layout.seg_head_begin};
    Tensor grad_bottom = decoder_backward(m, m.seg_decoder, m.seg_head, cache.seg,
                                          grad_seg_logits, grad_enc_act, seg_dec_sink,
                                          seg_head_sink);
    GradSink depth_dec_sink{&grads, layout.depth_dec_begin};
    GradSink depth_head_sink{&grads, layout.depth_head_begin};
    const Tensor grad_bottom_depth =
        decoder_backward(m, m.depth_decoder, m.depth_head, cache.depth, grad_depth_pre,
                         grad_enc_act, depth_dec_sink, depth_head_sink);
    for (std::size_t i = 0; i < grad_bottom.size(); ++i) grad_bottom[i] += grad_bottom_depth[i];

    // encoder, top stage first
    std::vector<std::size_t> enc_slot(depth);
    {
        const std::size_t per_enc = m.encoder.front().shape_composed ? 3 : 1;
        for (std::size_t i = 0; i < depth; ++i) enc_slot[i] = layout.enc_begin + i * per_enc;
    }
    Tensor grad_pool = std::move(grad_bottom);
    for (std::size_t step = 0; step < depth; ++step) {
        const std::size_t i = depth - 1 - step;
        const Tensor& act = cache.enc_act[i];
        Tensor grad_act = avgpool2_backward(grad_pool, act.extent(0), act.extent(1));
        for (std::size_t p = 0; p < grad_act.size(); ++p) grad_act[p] += grad_enc_act[i][p];
        const Tensor grad_pre = relu_backward(cache.enc_pre[i], grad_act);

        const ConvLayer& layer = m.encoder[i];
        GradSink sink{&grads, enc_slot[i]};
        Tensor grad_input;
        if (layer.shape_composed) {
            GuidedConvGrads g =
                layer.depth_guided
                    ? da_shape_conv_backward(cache.enc_in[i], layer.params,
                                             cache.stage_guide[i], layer.geom, grad_pre)
                    : shape_conv_backward(cache.enc_in[i], layer.params, layer.geom, grad_pre);
            sink.add_layer(layer, g.kernel, &g.w_base, &g.w_shape);
            grad_input = std::move(g.input);
        } else if (layer.depth_guided) {
            DepthAwareConvGrads g =
                depth_aware_conv_backward(cache.enc_in[i], layer.params.kernel,
                                          cache.stage_guide[i], layer.params.alpha, layer.geom,
                                          grad_pre);
            sink.add(g.kernel);
            grad_input = std::move(g.input);
        } else {
            Conv2dGrads g = conv2d_backward(cache.enc_in[i], layer.params.kernel, layer.geom,
                                            grad_pre);
            sink.add(g.kernel);
            grad_input = std::move(g.input);
        }
        if (i > 0) grad_pool = std::move(grad_input);
    }
}

}  // namespace

std::vector<Tensor> guidance_chain(const Tensor& depth, std::size_t stages) {
    if (depth.rank() != 2) throw std::invalid_argument("guidance_chain: depth must be rank 2");
    std::vector<Tensor> chain;
    chain.reserve(stages);
    Tensor g = depth;
    for (std::size_t i = 0; i < stages; ++i) {
        chain.push_back(g);
        if (i + 1 == stages) break;
        const std::size_t h = g.extent(0) / 2, w = g.extent(1) / 2;
        Tensor next({h, w});
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) next.at(y, x) = g.at(2 * y, 2 * x);
        }
        g = std::move(next);
    }
    return chain;
}

Tensor make_input(const Tensor& ir, const Tensor& depth, std::size_t in_channels) {
    if (ir.rank() != 2 || !ir.same_shape(depth)) {
        throw std::invalid_argument("make_input: ir/depth must share one H x W shape");
    }
    if (in_channels != 2 && in_channels != 4) {
        throw std::invalid_argument("make_input: in_channels must be 2 or 4");
    }
    const std::size_t h = ir.extent(0), w = ir.extent(1);
    Tensor input({h, w, in_channels});
    const std::size_t ir_copies = in_channels - 1;
    for (std::size_t p = 0; p < h * w; ++p) {
        double* dst = input.data() + p * in_channels;
        const double scaled = ir[p] * kIrInputScale;
        for (std::size_t c = 0; c < ir_copies; ++c) dst[c] = scaled;
        dst[ir_copies] = depth[p] * kDepthInputScale;
    }
    return input;
}

ForwardResult forward(const Model& model, const Tensor& input, const DepthGuidance& guide) {
    ForwardCache cache;
    return forward_impl(model, input, guide, cache);
}

Tensor composite_depth(const Tensor& pred, const Tensor& raw_depth, const Tensor& mask) {
    if (!pred.same_shape(raw_depth) || !pred.same_shape(mask)) {
        throw std::invalid_argument("composite_depth: shape mismatch");
    }
    Tensor out(pred.shape());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        out[i] = mask[i] != 0.0 ? pred[i] : raw_depth[i];
    }
    return out;
}

double masked_depth_loss(const Tensor& pred, const Tensor& gt_filled, const Tensor& mask) {
    if (!pred.same_shape(gt_filled) || !pred.same_shape(mask)) {
        throw std::invalid_argument("masked_depth_loss: shape mismatch");
    }
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (mask[i] == 0.0) continue;
        sum += std::abs(pred[i] - gt_filled[i]);
        ++count;
    }
    return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

Tensor masked_depth_loss_grad(const Tensor& pred, const Tensor& gt_filled, const Tensor& mask) {
    Tensor grad(pred.shape());
    std::size_t count = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i] != 0.0) ++count;
    }
    if (count == 0) return grad;
    const double inv = 1.0 / static_cast<double>(count);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (mask[i] == 0.0) continue;
        const double d = pred[i] - gt_filled[i];
        grad[i] = d > 0.0 ? inv : (d < 0.0 ? -inv : 0.0);
    }
    return grad;
}

namespace {

struct SegLossTerms {
    double loss = 0.0;
    Tensor grad;
};

SegLossTerms seg_loss_impl(const Tensor& logits, const Tensor& labels, int ignore_id,
                           bool want_grad) {
    if (logits.rank() != 3 || labels.rank() != 2 || logits.extent(0) != labels.extent(0) ||
        logits.extent(1) != labels.extent(1)) {
        throw std::invalid_argument("seg_loss: logits/labels shape mismatch");
    }
    const std::size_t pixels = labels.size();
    const std::size_t nc = logits.extent(2);

    SegLossTerms out;
    if (want_grad) out.grad = Tensor(logits.shape());

    double loss_sum = 0.0;
    std::size_t count = 0;
    std::vector<std::size_t> counted;
    counted.reserve(pixels);
    for (std::size_t p = 0; p < pixels; ++p) {
        const long label = std::lround(labels[p]);
        if (ignore_id >= 0 && label == ignore_id) continue;
        if (label < 0 || label >= static_cast<long>(nc)) {
            throw std::invalid_argument("seg_loss: label out of range");
        }
        const double* l = logits.data() + p * nc;
        double m = l[0];
        for (std::size_t c = 1; c < nc; ++c) m = std::max(m, l[c]);
        double sum_exp = 0.0;
        for (std::size_t c = 0; c < nc; ++c) sum_exp += std::exp(l[c] - m);
        const double lse = m + std::log(sum_exp);
        loss_sum += lse - l[static_cast<std::size_t>(label)];
        ++count;
        if (want_grad) counted.push_back(p);
    }
    out.loss = count == 0 ? 0.0 : loss_sum / static_cast<double>(count);

    if (want_grad && count > 0) {
        const double inv = 1.0 / static_cast<double>(count);
        for (std::size_t p : counted) {
            const long label = std::lround(labels[p]);
            const double* l = logits.data() + p * nc;
            double* g = out.grad.data() + p * nc;
            double m = l[0];
            for (std::size_t c = 1; c < nc; ++c) m = std::max(m, l[c]);
            double sum_exp = 0.0;
            for (std::size_t c = 0; c < nc; ++c) sum_exp += std::exp(l[c] - m);
            for (std::size_t c = 0; c < nc; ++c) {
                const double softmax = std::exp(l[c] - m) / sum_exp;
                g[c] = (softmax - (static_cast<long>(c) == label ? 1.0 : 0.0)) * inv;
            }
        }
    }
    return out;
}

}  // namespace

double seg_loss(const Tensor& logits, const Tensor& labels, int ignore_id) {
    return seg_loss_impl(logits, labels, ignore_id, false).loss;
}

Tensor seg_loss_grad(const Tensor& logits, const Tensor& labels, int ignore_id) {
    return seg_loss_impl(logits, labels, ignore_id, true).grad;
}

double total_loss(double seg, double depth, double lambda_depth) {
    if (lambda_depth < 0.0) throw std::invalid_argument("lambda_depth must be >= 0");
    return seg + lambda_depth * depth;
}

OptimizerState make_optimizer(Model& model, double learning_rate) {
    OptimizerState opt;
    opt.learning_rate = learning_rate;
    for (const ParamRef& p : parameters(model)) {
        opt.velocity.emplace_back(p.tensor->shape());
    }
    return opt;
}

void sgd_update(Model& model, OptimizerState& opt, const std::vector<Tensor>& grads) {
    const std::vector<ParamRef> params = parameters(model);
    if (params.size() != grads.size() || params.size() != opt.velocity.size()) {
        throw std::invalid_argument("sgd_update: parameter/gradient count mismatch");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& theta = *params[i].tensor;
        Tensor& v = opt.velocity[i];
        const Tensor& g = grads[i];
        for (std::size_t j = 0; j < theta.size(); ++j) {
            v[j] = opt.momentum * v[j] + (g[j] + opt.weight_decay * theta[j]);
            theta[j] -= opt.learning_rate * v[j];
        }
    }
}

TrainStepReport compute_batch_gradients(Model& model,
                                        const std::vector<const ImageSample*>& batch,
                                        double lambda_depth, std::vector<Tensor>& grads) {
    if (batch.empty()) throw std::invalid_argument("train batch must be nonempty");
    for (const ImageSample* s : batch) {
        if (!s->ir.same_shape(batch.front()->ir)) {
            throw std::invalid_argument("train batch must have uniform spatial size");
        }
    }

    struct SampleResult {
        std::vector<Tensor> grads;
        double seg = 0.0;
        double depth = 0.0;
    };
    std::vector<SampleResult> results(batch.size());

    parallel_for(batch.size(), [&](std::size_t bi) {
        const ImageSample& s = *batch[bi];
        const Tensor input = make_input(s.ir, s.depth_raw, model.config.in_channels);
        const DepthGuidance guide = DepthGuidance::from_depth(s.depth_raw);
        ForwardCache cache;
        const ForwardResult out = forward_impl(model, input, guide, cache);

        results[bi].seg = seg_loss(out.seg_logits, s.labels);
        results[bi].depth = masked_depth_loss(out.dense_depth, s.depth_filled_gt, s.mask_missing);

        const Tensor grad_logits = seg_loss_grad(out.seg_logits, s.labels);
        Tensor grad_depth = masked_depth_loss_grad(out.dense_depth, s.depth_filled_gt,
                                                   s.mask_missing);
        for (std::size_t i = 0; i < grad_depth.size(); ++i) grad_depth[i] *= lambda_depth;
        backward_impl(model, cache, grad_logits, grad_depth, results[bi].grads);
    });

    TrainStepReport report;
    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    grads.assign(results.front().grads.size(), Tensor());
    for (std::size_t slot = 0; slot < grads.size(); ++slot) {
        grads[slot] = Tensor(results.front().grads[slot].shape());
        for (std::size_t bi = 0; bi < results.size(); ++bi) {
            const Tensor& g = results[bi].grads[slot];
            for (std::size_t j = 0; j < g.size(); ++j) grads[slot][j] += g[j];
        }
        for (std::size_t j = 0; j < grads[slot].size(); ++j) grads[slot][j] *= inv_batch;
    }
    for (const SampleResult& r : results) {
        report.seg += r.seg * inv_batch;
        report.depth += r.depth * inv_batch;
    }
    report.total = total_loss(report.seg, report.depth, lambda_depth);
    if (!std::isfinite(report.total)) {
        throw NumericalError("train step produced non-finite loss (seg=" +
                             std::to_string(report.seg) + ", depth=" +
                             std::to_string(report.depth) + ")");
    }
    return report;
}

TrainStepReport train_step(Model& model, const std::vector<const ImageSample*>& batch,
                           OptimizerState& opt, double lambda_depth) {
    std::vector<Tensor> grads;
    const TrainStepReport report = compute_batch_gradients(model, batch, lambda_depth, grads);
    sgd_update(model, opt, grads);
    return report;
}

namespace {

constexpr char kModelMagic[4] = {'I', 'R', 'D', 'M'};
constexpr std::uint32_t kModelVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& in, const std::string& ctx) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw IoError(ctx + ": truncated u32");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t get_u64(std::istream& in, const std::string& ctx) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw IoError(ctx + ": truncated u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(kModelMagic, 4);
    put_u32(out, kModelVersion);
    const std::string config = serialize_network_config(model.config);
    put_u64(out, config.size());
    out.write(config.data(), static_cast<std::streamsize>(config.size()));

    std::size_t count = 0;
    visit_params(model, [&](const std::string&, const Tensor&) { ++count; });
    put_u64(out, count);
    visit_params(model, [&](const std::string& name, const Tensor& t) {
        put_u64(out, name.size());
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_tensor(out, t);
    });
    if (!out) throw IoError("write failed: " + path);
}

Model load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kModelMagic, 4) != 0) {
        throw IoError(path + ": bad checkpoint magic (expected IRDM)");
    }
    const std::uint32_t version = get_u32(in, path);
    if (version != kModelVersion) {
        throw IoError(path + ": unsupported checkpoint version " + std::to_string(version));
    }
    const std::uint64_t config_len = get_u64(in, path);
    std::string config_text(config_len, '\0');
    if (!in.read(config_text.data(), static_cast<std::streamsize>(config_len))) {
        throw IoError(path + ": truncated config text");
    }
    Model model = build_model(parse_network_config(config_text));

    const std::uint64_t count = get_u64(in, path);
    std::vector<ParamRef> params = parameters(model);
    if (count != params.size()) {
        throw IoError(path + ": checkpoint parameter count mismatch");
    }
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint64_t name_len = get_u64(in, path);
        std::string name(name_len, '\0');
        if (!in.read(name.data(), static_cast<std::streamsize>(name_len))) {
            throw IoError(path + ": truncated parameter name");
        }
        if (name != params[i].name) {
            throw IoError(path + ": unexpected parameter '" + name + "' (want '" +
                          params[i].name + "')");
        }
        Tensor t = read_tensor(in, path + ":" + name);
        if (!t.same_shape(*params[i].tensor)) {
            throw IoError(path + ": shape mismatch for parameter '" + name + "'");
        }
        *params[i].tensor = std::move(t);
    }
    return model;
}

}  // namespace irdseg
