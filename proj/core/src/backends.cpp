// Copyright (C) 2026 The roqlora Authors
// SPDX-License-Identifier: Apache-2.0
//

// Eigen must precede httplib: <resolv.h> defines a `_res` macro that
// collides with Eigen parameter names.
#include "roqlora/harness.hpp"

#include <cstdlib>
#include <fstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "roqlora/errors.hpp"

namespace roqlora::harness {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// ReplayBackend

ReplayBackend::ReplayBackend(std::map<std::string, std::string> completions)
    : completions_(std::move(completions)) {}

ReplayBackend ReplayBackend::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidArgument("cannot open replay file " + path.string());
    std::map<std::string, std::string> map;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto where = path.filename().string() + ":" + std::to_string(line_no);
        json record;
        try {
            record = json::parse(line);
        } catch (const json::parse_error& e) {
            throw FormatError(where + ": " + e.what());
        }
        if (!record.is_object() || !record.contains("completion") || !record["completion"].is_string())
            throw FormatError(where + ": expected {\"prompt\" | \"prompt_sha256\", \"completion\"}");
        std::string key;
        if (record.contains("prompt") && record["prompt"].is_string()) {
            key = record["prompt"].get<std::string>();
        } else if (record.contains("prompt_sha256") && record["prompt_sha256"].is_string()) {
            key = record["prompt_sha256"].get<std::string>();
        } else {
            throw FormatError(where + ": record has neither \"prompt\" nor \"prompt_sha256\"");
        }
        map[key] = record["completion"].get<std::string>();
    }
    return ReplayBackend(std::move(map));
}

std::string ReplayBackend::complete(const std::string& prompt, const GenerationConfig&) {
    if (const auto it = completions_.find(prompt); it != completions_.end()) return it->second;
    const auto hash = sha256_hex(prompt);
    if (const auto it = completions_.find(hash); it != completions_.end()) return it->second;
    throw BackendError("no recorded completion for prompt " + hash);
}

// ---------------------------------------------------------------------------
// LocalBackend

LocalBackend::LocalBackend(tinylm::TinyLm model, std::unique_ptr<Tokenizer> tokenizer)
    : model_(std::move(model)), tokenizer_(std::move(tokenizer)) {
    if (!tokenizer_) throw InvalidArgument("local backend needs a tokenizer");
    if (tokenizer_->vocab_size() > model_.config().vocab_size)
        throw InvalidArgument("tokenizer vocabulary exceeds the model's");
}

std::string LocalBackend::complete(const std::string& prompt, const GenerationConfig& gen) {
    tinylm::Rng rng(gen.seed);
    try {
        return tinylm::generate(model_, *tokenizer_, prompt, gen, rng);
    } catch (const NumericError& e) {
        throw BackendError(std::string("local generation failed: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// HttpBackend

namespace {

std::string env_or_empty(const char* name) {
    const char* v = std::getenv(name);
    return v ? std::string(v) : std::string();
}

}  // namespace

HttpBackendOptions HttpBackendOptions::from_env() {
    HttpBackendOptions o;
    o.url = env_or_empty("ROQLORA_ENDPOINT");
    o.api_token = env_or_empty("ROQLORA_API_TOKEN");
    o.model = env_or_empty("ROQLORA_MODEL");
    return o;
}

HttpBackend::HttpBackend(HttpBackendOptions options) : options_(std::move(options)) {
    const auto& url = options_.url;
    const auto scheme_end = url.find("://");
    if (url.empty() || scheme_end == std::string::npos)
        throw InvalidArgument("endpoint URL must look like http[s]://host[:port]/path, got \"" + url + "\"");
    const auto scheme = url.substr(0, scheme_end);
    if (scheme != "http" && scheme != "https") throw InvalidArgument("unsupported URL scheme \"" + scheme + "\"");
    const auto path_start = url.find('/', scheme_end + 3);
    origin_ = url.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
    if (options_.max_attempts < 1) throw InvalidArgument("max_attempts must be at least 1");
}

std::string HttpBackend::request_body(const std::string& prompt, const GenerationConfig& gen,
                                      const std::string& model) {
    ojson body;
    if (!model.empty()) body["model"] = model;
    body["prompt"] = prompt;
    body["temperature"] = gen.temperature;
    body["top_p"] = gen.top_p;
    body["max_tokens"] = gen.max_new_tokens;
    body["stop"] = gen.stop.empty() ? ojson::array() : ojson::array({gen.stop});
    body["seed"] = gen.seed;
    return body.dump(-1, ' ', false, ojson::error_handler_t::replace);
}

std::string HttpBackend::complete(const std::string& prompt, const GenerationConfig& gen) {
    const auto body = request_body(prompt, gen, options_.model);
    std::string last_error;
    auto delay = options_.initial_backoff;
    for (int attempt = 1; attempt <= options_.max_attempts; ++attempt) {
        if (attempt > 1) {
            std::this_thread::sleep_for(delay);
            delay *= 2;
        }
        httplib::Client client(origin_);
        client.set_connection_timeout(options_.timeout);
        client.set_read_timeout(options_.timeout);
        client.set_write_timeout(options_.timeout);
        if (!options_.api_token.empty()) client.set_bearer_token_auth(options_.api_token);
        const auto res = client.Post(path_, body, "application/json");
        if (!res) {
            last_error = "request failed: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status == 429 || res->status >= 500) {
            last_error = "HTTP " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200) throw BackendError("HTTP " + std::to_string(res->status) + ": " + res->body);
        try {
            const auto j = json::parse(res->body);
            if (j.contains("text") && j["text"].is_string()) return j["text"].get<std::string>();
            if (j.contains("choices") && j["choices"].is_array() && !j["choices"].empty()) {
                const auto& c = j["choices"][0];
                if (c.contains("text") && c["text"].is_string()) return c["text"].get<std::string>();
            }
        } catch (const json::exception&) {
        }
        throw BackendError("response has no completion text");
    }
    throw BackendError(origin_ + path_ + ": gave up after " + std::to_string(options_.max_attempts) +
                       " attempts (" + last_error + ")");
}

}  // namespace roqlora::harness
