#include "escim/data.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "escim/errors.hpp"
#include "escim/rng.hpp"
#include "escim/vendor_json.hpp"

namespace escim {

void FeatureSchema::validate() const {
    if (fields.size() < 2 || fields[0].name != "user_id" || fields[1].name != "item_id")
        throw ConfigError("schema: first two fields must be user_id and item_id");
    if (embedding_dim == 0) throw ConfigError("schema: embedding_dim must be >= 1");
    std::unordered_set<std::string> names;
    for (const auto& f : fields) {
        if (f.cardinality < 1) throw ConfigError("schema: field '" + f.name + "' cardinality < 1");
        if (!names.insert(f.name).second)
            throw ConfigError("schema: duplicate field name '" + f.name + "'");
    }
}

std::uint64_t FeatureSchema::content_hash() const {
    std::uint64_t h = fnv1a64("schema");
    for (const auto& f : fields) {
        h = fnv1a64(f.name, h);
        h = fnv1a64(std::to_string(f.cardinality), h);
    }
    return fnv1a64(std::to_string(embedding_dim), h);
}

FeatureSchema FeatureSchema::desk_default() {
    FeatureSchema s;
    s.embedding_dim = 4;
    s.fields = {{"user_id", 50}, {"item_id", 50}, {"ctx_0", 20}, {"ctx_1", 20},
                {"ctx_2", 10},  {"ctx_3", 10},   {"ctx_4", 5},  {"ctx_5", 5}};
    return s;
}

FeatureSchema FeatureSchema::from_json_text(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("schema json: ") + e.what());
    }
    FeatureSchema s;
    if (!j.contains("fields") || !j["fields"].is_array())
        throw ConfigError("schema json: missing 'fields' array");
    for (const auto& f : j["fields"]) {
        FieldSpec spec;
        spec.name = f.at("name").get<std::string>();
        spec.cardinality = f.at("cardinality").get<std::size_t>();
        s.fields.push_back(spec);
    }
    s.embedding_dim = j.value("embedding_dim", std::size_t{4});
    s.validate();
    return s;
}

FeatureSchema FeatureSchema::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open schema file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str());
}

std::string FeatureSchema::to_json_text() const {
    nlohmann::json j;
    j["embedding_dim"] = embedding_dim;
    j["fields"] = nlohmann::json::array();
    for (const auto& f : fields) j["fields"].push_back({{"name", f.name}, {"cardinality", f.cardinality}});
    return j.dump(2);
}

namespace {

std::vector<std::string> split_line(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

std::uint64_t parse_uint(const std::string& tok, std::size_t line_no, const std::string& col) {
    if (tok.empty()) throw ParseError("line " + std::to_string(line_no) + ": empty " + col);
    std::uint64_t v = 0;
    for (char c : tok) {
        if (c < '0' || c > '9')
            throw ParseError("line " + std::to_string(line_no) + ": bad integer '" + tok +
                             "' in column " + col);
        v = v * 10 + static_cast<std::uint64_t>(c - '0');
    }
    return v;
}

}  // namespace

InteractionLog load_csv(const std::string& path, const FeatureSchema& schema) {
    schema.validate();
    std::ifstream in(path);
    if (!in) throw IoError("cannot open log file: " + path);

    std::string expected_header;
    for (const auto& f : schema.fields) expected_header += f.name + ",";
    expected_header += "click,conversion";

    std::string line;
    if (!std::getline(in, line)) throw ParseError(path + ": missing header row");
    {
        auto cleaned = split_line(line, ',');
        std::string got;
        for (std::size_t i = 0; i < cleaned.size(); ++i) got += (i ? "," : "") + cleaned[i];
        if (got != expected_header)
            throw ParseError(path + ": header mismatch, expected '" + expected_header + "'");
    }

    InteractionLog log;
    log.schema = schema;
    const std::size_t n_cols = schema.n_fields() + 2;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto toks = split_line(line, ',');
        if (toks.size() != n_cols)
            throw ParseError("line " + std::to_string(line_no) + ": expected " +
                             std::to_string(n_cols) + " columns, got " + std::to_string(toks.size()));
        Sample s;
        s.feature_ids.resize(schema.n_fields());
        for (std::size_t f = 0; f < schema.n_fields(); ++f) {
            const std::uint64_t v = parse_uint(toks[f], line_no, schema.fields[f].name);
            if (v >= schema.fields[f].cardinality)
                throw IntegrityError("line " + std::to_string(line_no) + ": feature '" +
                                     schema.fields[f].name + "' id " + std::to_string(v) +
                                     " >= cardinality " +
                                     std::to_string(schema.fields[f].cardinality));
            s.feature_ids[f] = static_cast<std::uint32_t>(v);
        }
        const std::uint64_t c = parse_uint(toks[n_cols - 2], line_no, "click");
        const std::uint64_t v = parse_uint(toks[n_cols - 1], line_no, "conversion");
        if (c > 1 || v > 1)
            throw ParseError("line " + std::to_string(line_no) + ": click/conversion must be 0 or 1");
        if (v == 1 && c == 0)
            throw IntegrityError("line " + std::to_string(line_no) +
                                 ": conversion=1 with click=0 violates the click-then-convert rule");
        s.click = static_cast<std::uint8_t>(c);
        s.conversion = static_cast<std::uint8_t>(v);
        log.samples.push_back(std::move(s));
    }
    return log;
}

void write_csv(const InteractionLog& log, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write log file: " + path);
    for (std::size_t f = 0; f < log.schema.n_fields(); ++f) out << log.schema.fields[f].name << ",";
    out << "click,conversion\n";
    for (const auto& s : log.samples) {
        for (std::size_t f = 0; f < s.feature_ids.size(); ++f) out << s.feature_ids[f] << ",";
        out << int(s.click) << "," << int(s.conversion) << "\n";
    }
    if (!out) throw IoError("write failed: " + path);
}

SpacePartition partition_spaces(const InteractionLog& log) {
    SpacePartition p;
    p.total = log.size();
    for (std::size_t i = 0; i < log.samples.size(); ++i) {
        if (log.samples[i].click)
            p.clicked.push_back(i);
        else
            p.non_clicked.push_back(i);
        if (log.samples[i].conversion) p.converted.push_back(i);
    }
    return p;
}

SplitResult split(const InteractionLog& log, double val_fraction, std::uint64_t seed) {
    if (val_fraction < 0.0 || val_fraction >= 1.0)
        throw ContractError("split: val_fraction must be in [0,1)");
    std::vector<std::size_t> order(log.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, "split"));
    rng.shuffle(order);
    const std::size_t n_val =
        static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(log.size())));
    std::vector<bool> is_val(log.size(), false);
    for (std::size_t i = 0; i < n_val; ++i) is_val[order[i]] = true;

    SplitResult out;
    out.train.schema = log.schema;
    out.val.schema = log.schema;
    for (std::size_t i = 0; i < log.size(); ++i)
        (is_val[i] ? out.val : out.train).samples.push_back(log.samples[i]);
    return out;
}

std::vector<std::size_t> downsample_negative_indices(const InteractionLog& log, std::size_t ratio,
                                                     std::uint64_t seed) {
    if (ratio < 1) throw ContractError("downsample: ratio must be >= 1");
    const SpacePartition part = partition_spaces(log);
    const std::size_t cap = ratio * part.clicked.size();
    std::vector<std::size_t> kept;
    if (part.non_clicked.size() <= cap) {
        kept.resize(log.size());
        std::iota(kept.begin(), kept.end(), 0);
        return kept;
    }
    std::vector<std::size_t> negatives = part.non_clicked;
    Rng rng(derive_seed(seed, "downsample"));
    rng.shuffle(negatives);
    negatives.resize(cap);
    std::vector<bool> keep(log.size(), false);
    for (std::size_t i : part.clicked) keep[i] = true;
    for (std::size_t i : negatives) keep[i] = true;
    for (std::size_t i = 0; i < log.size(); ++i)
        if (keep[i]) kept.push_back(i);
    return kept;
}

InteractionLog downsample_negatives(const InteractionLog& log, std::size_t ratio,
                                    std::uint64_t seed) {
    const auto kept = downsample_negative_indices(log, ratio, seed);
    InteractionLog out;
    out.schema = log.schema;
    out.samples.reserve(kept.size());
    for (std::size_t i : kept) out.samples.push_back(log.samples[i]);
    return out;
}

std::vector<std::vector<std::size_t>> batches(std::size_t n_samples, std::size_t batch_size,
                                              std::uint64_t seed, std::uint64_t epoch) {
    if (batch_size < 1) throw ContractError("batches: batch_size must be >= 1");
    std::vector<std::size_t> order(n_samples);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, "batches", epoch));
    rng.shuffle(order);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < n_samples; start += batch_size) {
        const std::size_t end = std::min(start + batch_size, n_samples);
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

}  // namespace escim
