#include "steglearn/run_config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace steglearn {

namespace {

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string real(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <typename T>
T parse_number(const std::string& v, const std::string& where)
{
    T out{};
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size()) {
        throw ConfigError(where + ": cannot parse '" + v + "' as a number");
    }
    return out;
}

double parse_real(const std::string& v, const std::string& where)
{
    std::size_t used = 0;
    double out = 0;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != v.size() || v.empty()) {
        throw ConfigError(where + ": cannot parse '" + v + "' as a real");
    }
    return out;
}

bool parse_bool(const std::string& v, const std::string& where)
{
    if (v == "true" || v == "1") {
        return true;
    }
    if (v == "false" || v == "0") {
        return false;
    }
    throw ConfigError(where + ": expected true or false, got '" + v + "'");
}

using Setter = std::function<void(RunConfig&, const std::string& value, const std::string& where)>;

const std::map<std::string, Setter>& setters()
{
    static const std::map<std::string, Setter> table = {
        {"lambda", [](RunConfig& c, const std::string& v, const std::string& w) { c.train.lambda = parse_real(v, w); }},
        {"lr0", [](RunConfig& c, const std::string& v, const std::string& w) { c.train.lr0 = parse_real(v, w); }},
        {"lr_multiplier",
         [](RunConfig& c, const std::string& v, const std::string& w) { c.train.lr_multiplier = parse_real(v, w); }},
        {"lr_drops_max",
         [](RunConfig& c, const std::string& v, const std::string& w) { c.train.lr_drops_max = parse_number<int>(v, w); }},
        {"plateau_epochs",
         [](RunConfig& c, const std::string& v, const std::string& w) { c.train.plateau_epochs = parse_number<int>(v, w); }},
        {"plateau_min_delta",
         [](RunConfig& c, const std::string& v, const std::string& w) { c.train.plateau_min_delta = parse_real(v, w); }},
        {"momentum", [](RunConfig& c, const std::string& v, const std::string& w) { c.train.momentum = parse_real(v, w); }},
        {"batch_size",
         [](RunConfig& c, const std::string& v, const std::string& w) { c.train.batch_size = parse_number<int>(v, w); }},
        {"init_std", [](RunConfig& c, const std::string& v, const std::string& w) { c.train.init_std = parse_real(v, w); }},
        {"fc_weight_decay",
         [](RunConfig& c, const std::string& v, const std::string& w) { c.train.fc_weight_decay = parse_real(v, w); }},
        {"seed",
         [](RunConfig& c, const std::string& v, const std::string& w) { c.train.seed = parse_number<std::uint64_t>(v, w); }},
        {"max_epochs",
         [](RunConfig& c, const std::string& v, const std::string& w) { c.train.max_epochs = parse_number<int>(v, w); }},
        {"normalization",
         [](RunConfig& c, const std::string& v, const std::string&) { c.train.normalization = parse_normalization(v); }},
        {"sever_classifier_path",
         [](RunConfig& c, const std::string& v, const std::string& w) { c.train.sever_classifier_path = parse_bool(v, w); }},
        {"n_pairs",
         [](RunConfig& c, const std::string& v, const std::string& w) { c.dataset.n_pairs = parse_number<std::size_t>(v, w); }},
        {"n_test_pairs",
         [](RunConfig& c, const std::string& v, const std::string& w) {
             c.dataset.n_test_pairs = parse_number<std::size_t>(v, w);
         }},
        {"width", [](RunConfig& c, const std::string& v, const std::string& w) { c.dataset.width = parse_number<int>(v, w); }},
        {"height",
         [](RunConfig& c, const std::string& v, const std::string& w) { c.dataset.height = parse_number<int>(v, w); }},
        {"rate_bpp", [](RunConfig& c, const std::string& v, const std::string& w) { c.dataset.rate_bpp = parse_real(v, w); }},
        {"dataset_seed",
         [](RunConfig& c, const std::string& v, const std::string& w) {
             c.dataset.master_seed = parse_number<std::uint64_t>(v, w);
         }},
        {"dataset_dir", [](RunConfig& c, const std::string& v, const std::string&) { c.dataset_dir = v; }},
        {"out_dir", [](RunConfig& c, const std::string& v, const std::string&) { c.out_dir = v; }},
        {"checkpoint_every",
         [](RunConfig& c, const std::string& v, const std::string& w) { c.checkpoint_every = parse_number<int>(v, w); }},
        {"export_filters",
         [](RunConfig& c, const std::string& v, const std::string& w) { c.export_filters = parse_bool(v, w); }},
        {"export_features",
         [](RunConfig& c, const std::string& v, const std::string& w) { c.export_features = parse_bool(v, w); }},
    };
    return table;
}

} // namespace

RunConfig parse_run_config(const std::string& text, const std::string& origin)
{
    RunConfig config;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const std::string where = origin + ":" + std::to_string(line_no);
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(where + ": expected key=value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const auto it = setters().find(key);
        if (it == setters().end()) {
            throw ConfigError(where + ": unknown key '" + key + "'");
        }
        it->second(config, value, where);
    }
    return config;
}

RunConfig load_run_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open config " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_run_config(buf.str(), path.string());
}

std::string serialize_run_config(const RunConfig& c)
{
    std::string s = "# resolved run configuration\n";
    s += canonical_text(c.train);
    s += "n_pairs=" + std::to_string(c.dataset.n_pairs) + "\n";
    s += "n_test_pairs=" + std::to_string(c.dataset.n_test_pairs) + "\n";
    s += "width=" + std::to_string(c.dataset.width) + "\n";
    s += "height=" + std::to_string(c.dataset.height) + "\n";
    s += "rate_bpp=" + real(c.dataset.rate_bpp) + "\n";
    s += "dataset_seed=" + std::to_string(c.dataset.master_seed) + "\n";
    s += "dataset_dir=" + c.dataset_dir + "\n";
    s += "out_dir=" + c.out_dir + "\n";
    s += "checkpoint_every=" + std::to_string(c.checkpoint_every) + "\n";
    s += "export_filters=" + std::string(c.export_filters ? "true" : "false") + "\n";
    s += "export_features=" + std::string(c.export_features ? "true" : "false") + "\n";
    return s;
}

void save_run_config(const std::filesystem::path& path, const RunConfig& config)
{
    std::ofstream out(path, std::ios::trunc);
    out << serialize_run_config(config);
    if (!out) {
        throw IoError("cannot write config " + path.string());
    }
}

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history)
{
    std::ofstream out(path, std::ios::trunc);
    out << kHistoryHeader << '\n';
    for (const auto& r : history) {
        out << r.epoch << ',' << real(r.lr) << ',' << real(r.Jc) << ',' << real(r.Jr) << ',' << real(r.J) << ','
            << real(r.train_error) << ',' << real(r.val_error) << '\n';
    }
    if (!out) {
        throw IoError("cannot write history " + path.string());
    }
}

std::vector<EpochRecord> read_history_csv(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open history " + path.string());
    }
    std::string line;
    std::getline(in, line);
    if (line != kHistoryHeader) {
        throw IoError(path.string() + ": unexpected history header");
    }
    std::vector<EpochRecord> rows;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) {
            f.push_back(cell);
        }
        if (f.size() != 7) {
            throw IoError(path.string() + ": history row with " + std::to_string(f.size()) + " columns");
        }
        const std::string where = path.string();
        rows.push_back({parse_number<int>(f[0], where), parse_real(f[1], where), parse_real(f[2], where),
                        parse_real(f[3], where), parse_real(f[4], where), parse_real(f[5], where),
                        parse_real(f[6], where)});
    }
    return rows;
}

} // namespace steglearn
