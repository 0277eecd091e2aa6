#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace escim {

struct FieldSpec {
    std::string name;
    std::size_t cardinality = 0;
};

// All embedded categorical fields, in column order. The first two fields must
// be user_id and item_id; they double as sample identity and embedded features.
struct FeatureSchema {
    std::vector<FieldSpec> fields;
    std::size_t embedding_dim = 4;

    std::size_t n_fields() const { return fields.size(); }
    std::size_t total_embedding_dim() const { return fields.size() * embedding_dim; }
    void validate() const;
    std::uint64_t content_hash() const;

    static FeatureSchema desk_default();
    static FeatureSchema from_json_file(const std::string& path);
    static FeatureSchema from_json_text(const std::string& text);
    std::string to_json_text() const;
};

// One exposure record. feature_ids[0]/[1] are user_id/item_id.
struct Sample {
    std::vector<std::uint32_t> feature_ids;
    std::uint8_t click = 0;
    std::uint8_t conversion = 0;

    std::uint32_t user_id() const { return feature_ids[0]; }
    std::uint32_t item_id() const { return feature_ids[1]; }
};

struct InteractionLog {
    FeatureSchema schema;
    std::vector<Sample> samples;

    std::size_t size() const { return samples.size(); }
};

// Index sets of the exposure/click/non-click/conversion spaces.
struct SpacePartition {
    std::vector<std::size_t> clicked;      // C
    std::vector<std::size_t> non_clicked;  // N
    std::vector<std::size_t> converted;    // V
    std::size_t total = 0;                 // |D|
};

InteractionLog load_csv(const std::string& path, const FeatureSchema& schema);
void write_csv(const InteractionLog& log, const std::string& path);

SpacePartition partition_spaces(const InteractionLog& log);

struct SplitResult {
    InteractionLog train;
    InteractionLog val;
};

// Plain random split, no stratification; val gets round(val_fraction * n) rows.
SplitResult split(const InteractionLog& log, double val_fraction, std::uint64_t seed);

// Keeps every clicked sample; subsamples non-clicked uniformly without
// replacement down to at most ratio * |C|, preserving original row order.
InteractionLog downsample_negatives(const InteractionLog& log, std::size_t ratio,
                                    std::uint64_t seed);

// Same subsetting decision as downsample_negatives, exposed as kept indices so
// sibling per-row files can stay aligned with the kept rows.
std::vector<std::size_t> downsample_negative_indices(const InteractionLog& log, std::size_t ratio,
                                                     std::uint64_t seed);

// Seeded shuffle keyed by (seed, epoch); every index appears exactly once.
std::vector<std::vector<std::size_t>> batches(std::size_t n_samples, std::size_t batch_size,
                                              std::uint64_t seed, std::uint64_t epoch);

}  // namespace escim
