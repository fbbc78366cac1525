#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "pgqa/context_builder.hpp"
#include "pgqa/dialogue.hpp"
#include "pgqa/gateway.hpp"
#include "pgqa/ingest.hpp"
#include "pgqa/qa_gen.hpp"
#include "pgqa/taxonomy.hpp"

namespace pgqa::io {

using Json = nlohmann::json;
/// Insertion-ordered JSON; every file the engine writes uses it so key order is fixed.
using OJson = nlohmann::ordered_json;

/// One JSON value per non-blank line. Throws ParseError naming the record ordinal.
std::vector<Json> read_jsonl(std::istream& in);
std::vector<Json> read_jsonl_file(const std::string& path);
Json read_json_file(const std::string& path);
std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

ingest::RawPage raw_page_from_json(const Json& j, std::size_t index);
OJson document_to_json(const ingest::Document& doc);
ingest::Document document_from_json(const Json& j, std::size_t index = 0);
std::vector<ingest::Document> read_documents(std::istream& in);
std::vector<ingest::Document> read_documents_file(const std::string& path);
std::string documents_to_jsonl(const std::vector<ingest::Document>& docs);

Persona persona_from_json(const Json& j, std::size_t index = 0);
OJson persona_to_json(const Persona& p);
OJson dialogue_to_json(const DialogueRecord& d);
DialogueRecord dialogue_from_json(const Json& j, std::size_t index = 0);

/// Per-document counters of the generation loop (n is answerable_pairs, m is attempts).
OJson generation_stats_to_json(const qagen::GenerationResult& r);
OJson example_to_json(const context::TrainingExample& e);
OJson example_to_json(const context::ReiterationExample& e);

taxonomy::Taxonomy taxonomy_from_json(const Json& j);
OJson tag_to_json(const taxonomy::TagPrediction& t);
taxonomy::DocEntry doc_entry_from_json(const Json& j, std::size_t index = 0);
taxonomy::SamplingPlan plan_from_json(const Json& j);
OJson plan_to_json(const taxonomy::SamplingPlan& p);

gateway::GatewayConfig gateway_config_from_json(const Json& j);
OJson gateway_config_to_json(const gateway::GatewayConfig& c);

}  // namespace pgqa::io
