#include "fsprompt/checkpoint.hpp"

#include "fsprompt/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace fsprompt {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'F', 'S', 'P', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void put_raw(std::vector<std::uint8_t>& out, const T& v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    template <typename T>
    T read() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string read_string(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    void read_doubles(std::vector<double>& out, std::size_t n) {
        need(n * sizeof(double));
        out.resize(n);
        if (n) std::memcpy(out.data(), bytes_.data() + pos_, n * sizeof(double));
        pos_ += n * sizeof(double);
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw IoError("checkpoint truncated");
    }
    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

Tensor scalar_of(double v) { return Tensor::scalar(v); }

}  // namespace

void Checkpoint::put(const std::string& name, const Tensor& value) { entries_[name] = value.detached(); }

const Tensor& Checkpoint::get(const std::string& name) const {
    const auto it = entries_.find(name);
    if (it == entries_.end()) throw IoError("checkpoint has no entry '" + name + "'");
    return it->second;
}

double Checkpoint::get_scalar(const std::string& name) const { return get(name).item(); }

std::vector<std::uint8_t> Checkpoint::serialize() const {
    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    put_raw(out, kVersion);
    put_raw(out, static_cast<std::uint64_t>(entries_.size()));
    for (const auto& [name, t] : entries_) {
        put_raw(out, static_cast<std::uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        put_raw(out, static_cast<std::uint64_t>(t.rows()));
        put_raw(out, static_cast<std::uint64_t>(t.cols()));
        const auto d = t.data();
        const auto* p = reinterpret_cast<const std::uint8_t*>(d.data());
        out.insert(out.end(), p, p + d.size() * sizeof(double));
    }
    return out;
}

Checkpoint Checkpoint::deserialize(const std::vector<std::uint8_t>& bytes) {
    Reader r(bytes);
    const std::string magic = r.read_string(sizeof(kMagic));
    if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0) throw IoError("not a checkpoint (bad magic)");
    const auto version = r.read<std::uint32_t>();
    if (version != kVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
    const auto count = r.read<std::uint64_t>();
    Checkpoint ckpt;
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto len = r.read<std::uint32_t>();
        std::string name = r.read_string(len);
        const auto rows = r.read<std::uint64_t>();
        const auto cols = r.read<std::uint64_t>();
        std::vector<double> data;
        r.read_doubles(data, rows * cols);
        ckpt.entries_[name] = Tensor({rows, cols}, std::move(data));
    }
    if (!r.done()) throw IoError("trailing bytes after checkpoint entries");
    return ckpt;
}

void Checkpoint::save(const std::filesystem::path& path) const {
    const auto bytes = serialize();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

void store_backbone(Checkpoint& ckpt, const BackboneWeights& weights) {
    const auto& c = weights.config();
    const std::pair<const char*, double> fields[] = {
        {"layers", static_cast<double>(c.layers)},
        {"vision_width", static_cast<double>(c.vision_width)},
        {"text_width", static_cast<double>(c.text_width)},
        {"embed_dim", static_cast<double>(c.embed_dim)},
        {"heads", static_cast<double>(c.heads)},
        {"patches", static_cast<double>(c.patches)},
        {"patch_dim", static_cast<double>(c.patch_dim)},
        {"template_tokens", static_cast<double>(c.template_tokens)},
        {"classes", static_cast<double>(c.classes)},
        {"class_capacity", static_cast<double>(c.class_capacity)},
        {"tau", c.tau},
    };
    for (const auto& [k, v] : fields) ckpt.put(std::string("backbone_config/") + k, scalar_of(v));
    weights.for_each([&](const std::string& name, const Tensor& t) { ckpt.put("backbone/" + name, t); });
}

BackboneWeights load_backbone(const Checkpoint& ckpt) {
    EncoderConfig c;
    auto sz = [&](const char* k) { return static_cast<std::size_t>(ckpt.get_scalar(std::string("backbone_config/") + k)); };
    c.layers = sz("layers");
    c.vision_width = sz("vision_width");
    c.text_width = sz("text_width");
    c.embed_dim = sz("embed_dim");
    c.heads = sz("heads");
    c.patches = sz("patches");
    c.patch_dim = sz("patch_dim");
    c.template_tokens = sz("template_tokens");
    c.classes = sz("classes");
    c.class_capacity = sz("class_capacity");
    c.tau = ckpt.get_scalar("backbone_config/tau");
    BackboneWeights w = BackboneWeights::zeros(c);
    w.for_each([&](const std::string& name, Tensor& t) {
        const Tensor& src = ckpt.get("backbone/" + name);
        if (src.shape() != t.shape())
            throw IoError("checkpoint entry backbone/" + name + " has shape " + src.shape().str() + ", expected " +
                          t.shape().str());
        t = src.detached();
    });
    w.freeze();
    return w;
}

void store_prompts(Checkpoint& ckpt, const PromptSet& prompts) {
    ckpt.put("prompts/mode", scalar_of(static_cast<double>(prompts.mode)));
    ckpt.put("prompts/layers", scalar_of(static_cast<double>(prompts.vision.size())));
    for (std::size_t l = 0; l < prompts.vision.size(); ++l) {
        ckpt.put("prompts/vision/layer" + std::to_string(l), prompts.vision[l]);
        ckpt.put("prompts/text/layer" + std::to_string(l), prompts.text[l]);
    }
}

PromptSet load_prompts(const Checkpoint& ckpt) {
    PromptSet p;
    p.mode = static_cast<PromptMode>(static_cast<int>(ckpt.get_scalar("prompts/mode")));
    const auto layers = static_cast<std::size_t>(ckpt.get_scalar("prompts/layers"));
    for (std::size_t l = 0; l < layers; ++l) {
        p.vision.push_back(ckpt.get("prompts/vision/layer" + std::to_string(l)).clone(true));
        p.text.push_back(ckpt.get("prompts/text/layer" + std::to_string(l)).clone(true));
    }
    return p;
}

void store_surgery(Checkpoint& ckpt, const SurgeryParams& surgery) {
    for (Tower t : {Tower::vision, Tower::text}) {
        const std::string p = std::string("surgery/") + to_string(t) + "/";
        const auto& b = surgery.branch(t);
        ckpt.put(p + "w_up", b.w_up);
        ckpt.put(p + "w_down", b.w_down);
        ckpt.put(p + "ln_gain", b.ln_gain);
        ckpt.put(p + "ln_bias", b.ln_bias);
    }
}

SurgeryParams load_surgery(const Checkpoint& ckpt, double gamma, double beta) {
    SurgeryParams s;
    for (Tower t : {Tower::vision, Tower::text}) {
        const std::string p = std::string("surgery/") + to_string(t) + "/";
        auto& b = s.branch(t);
        b.w_up = ckpt.get(p + "w_up").clone(true);
        b.w_down = ckpt.get(p + "w_down").clone(true);
        b.ln_gain = ckpt.get(p + "ln_gain").clone(true);
        b.ln_bias = ckpt.get(p + "ln_bias").clone(true);
    }
    s.gamma = gamma;
    s.beta = beta;
    return s;
}

}  // namespace fsprompt
