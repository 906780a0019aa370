#include "fsprompt/run_config.hpp"

#include "fsprompt/error.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace fsprompt {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double parse_double(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double out = 0.0;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != v.size()) throw ConfigError("'" + key + "': expected a number, got '" + v + "'");
    return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size())
        throw ConfigError("'" + key + "': expected a nonnegative integer, got '" + v + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("'" + key + "': expected true or false, got '" + v + "'");
}

struct Field {
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

template <typename M>
Field size_field(M member) {
    return {[member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); },
            [member](RunConfig& c, const std::string& k, const std::string& v) {
                member(c) = static_cast<std::remove_reference_t<decltype(member(c))>>(parse_uint(k, v));
            }};
}

template <typename M>
Field double_field(M member) {
    return {[member](const RunConfig& c) { return fmt_double(member(const_cast<RunConfig&>(c))); },
            [member](RunConfig& c, const std::string& k, const std::string& v) { member(c) = parse_double(k, v); }};
}

template <typename M>
Field bool_field(M member) {
    return {[member](const RunConfig& c) { return std::string(member(const_cast<RunConfig&>(c)) ? "true" : "false"); },
            [member](RunConfig& c, const std::string& k, const std::string& v) { member(c) = parse_bool(k, v); }};
}

#define REF(expr) [](RunConfig& c) -> auto& { return expr; }

// Ordered: serialization follows this order.
const std::vector<std::pair<std::string, Field>>& field_table() {
    static const std::vector<std::pair<std::string, Field>> table = {
        {"lambda_fs", double_field(REF(c.train.lambda_fs))},
        {"lr", double_field(REF(c.train.lr))},
        {"batch_size", size_field(REF(c.train.batch_size))},
        {"epochs", size_field(REF(c.train.epochs))},
        {"shots", size_field(REF(c.train.shots))},
        {"seed", size_field(REF(c.train.seed))},
        {"mode",
         {[](const RunConfig& c) { return std::string(to_string(c.train.mode)); },
          [](RunConfig& c, const std::string&, const std::string& v) { c.train.mode = parse_method(v); }}},
        {"gamma", double_field(REF(c.train.gamma))},
        {"beta", double_field(REF(c.train.beta))},
        {"tau", double_field(REF(c.train.tau))},
        {"a", size_field(REF(c.train.a))},
        {"b", size_field(REF(c.train.b))},
        {"momentum", double_field(REF(c.train.momentum))},
        {"fixed_alpha", double_field(REF(c.train.fixed_alpha))},
        {"use_tau", bool_field(REF(c.train.use_tau))},
        {"rms_norm", bool_field(REF(c.train.rms_norm))},
        {"stop_clean_grad", bool_field(REF(c.train.stop_clean_grad))},
        {"alpha_grad", bool_field(REF(c.train.alpha_grad))},
        {"surgery_hidden", size_field(REF(c.train.surgery_hidden))},

        {"classes", size_field(REF(c.data.classes))},
        {"per_class", size_field(REF(c.data.per_class))},
        {"noise", double_field(REF(c.data.noise))},
        {"domain_shift", double_field(REF(c.data.domain_shift))},
        {"world_seed", size_field(REF(c.data.world_seed))},
        {"data_seed", size_field(REF(c.data.seed))},
        {"test_per_class", size_field(REF(c.task.test_per_class))},
        {"class_split_seed", size_field(REF(c.task.class_split_seed))},

        {"pretrain_steps", size_field(REF(c.pretrain.steps))},
        {"pretrain_batch_size", size_field(REF(c.pretrain.batch_size))},
        {"pretrain_lr", double_field(REF(c.pretrain.lr))},
        {"pretrain_momentum", double_field(REF(c.pretrain.momentum))},
        {"pretrain_seed", size_field(REF(c.pretrain.init_seed))},
        {"pretrain_per_class", size_field(REF(c.pretrain_data.per_class))},
        {"pretrain_noise", double_field(REF(c.pretrain_data.noise))},
        {"pretrain_data_seed", size_field(REF(c.pretrain_data.seed))},

        {"layers", size_field(REF(c.encoder.layers))},
        {"vision_width", size_field(REF(c.encoder.vision_width))},
        {"text_width", size_field(REF(c.encoder.text_width))},
        {"embed_dim", size_field(REF(c.encoder.embed_dim))},
        {"heads", size_field(REF(c.encoder.heads))},
        {"patches", size_field(REF(c.encoder.patches))},
        {"patch_dim", size_field(REF(c.encoder.patch_dim))},
        {"template_tokens", size_field(REF(c.encoder.template_tokens))},
        {"class_capacity", size_field(REF(c.encoder.class_capacity))},
        {"pretrain_tau", double_field(REF(c.encoder.tau))},
    };
    return table;
}

#undef REF

const Field& find_field(const std::string& key) {
    for (const auto& [name, f] : field_table())
        if (name == key) return f;
    throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

RunConfig::RunConfig() {
    pretrain_data.per_class = 200;
    pretrain_data.seed = 99;
    pretrain.steps = 300;
    pretrain.lr = 0.002;
    data.domain_shift = 1.0;
    data.seed = 7;
}

void RunConfig::validate() const {
    encoder.validate();
    train.validate();
    if (data.classes != encoder.classes || pretrain_data.classes != encoder.classes)
        throw ConfigError("corpus classes must match the encoder's class count");
    if (data.world_seed != pretrain_data.world_seed)
        throw ConfigError("pretraining and downstream corpora must share world_seed");
    if (data.noise < 0.0 || pretrain_data.noise < 0.0) throw ConfigError("noise must be >= 0");
    if (data.per_class < train.shots + task.test_per_class)
        throw ConfigError("per_class must cover shots + test_per_class");
    if (pretrain.steps == 0 || pretrain.batch_size < 2) throw ConfigError("pretraining needs steps > 0, batch >= 2");
}

TaskOptions RunConfig::task_options() const {
    TaskOptions t = task;
    t.shots = train.shots;
    return t;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    find_field(key).set(*this, key, value);
    if (key == "classes") {
        encoder.classes = data.classes;
        pretrain_data.classes = data.classes;
    }
    if (key == "world_seed") pretrain_data.world_seed = data.world_seed;
}

std::string RunConfig::get(const std::string& key) const { return find_field(key).get(*this); }

const std::vector<std::string>& RunConfig::keys() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> out;
        for (const auto& [name, f] : field_table()) out.push_back(name);
        return out;
    }();
    return names;
}

std::string RunConfig::serialize() const {
    std::ostringstream os;
    for (const auto& [name, f] : field_table()) os << name << " = " << f.get(*this) << '\n';
    return os.str();
}

RunConfig RunConfig::parse(const std::string& text) {
    RunConfig c;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

void RunConfig::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << serialize();
    if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace fsprompt
