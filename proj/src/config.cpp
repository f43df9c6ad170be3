#include "slr/config.hpp"

#include <cstdlib>
#include <set>

#include "slr/errors.hpp"
#include "slr/util.hpp"

namespace slr {

using nlohmann::json;

namespace {

int to_int(const std::string &value, const std::string &where) {
    try {
        std::size_t used = 0;
        const int parsed = std::stoi(value, &used);
        if (used == value.size())
            return parsed;
    } catch (const std::exception &) {
    }
    throw ValidationError(where + ": expected an integer, got \"" + value + "\"");
}


double to_double(const std::string &value, const std::string &where) {
    try {
        std::size_t used = 0;
        const double parsed = std::stod(value, &used);
        if (used == value.size())
            return parsed;
    } catch (const std::exception &) {
    }
    throw ValidationError(where + ": expected a number, got \"" + value + "\"");
}


std::vector<std::string> to_list(const std::string &value) {
    std::vector<std::string> items;
    for (const auto &part : split(value, ',')) {
        auto item = trim(part);
        if (not item.empty())
            items.push_back(std::move(item));
    }
    return items;
}


void set_key(ServiceConfig &config, const std::string &section, const std::string &key, const std::string &value,
             const std::string &where) {
    auto unknown = [&] { throw ValidationError(where + ": unknown key \"" + key + "\" in [" + section + "]"); };
    if (section == "llm") {
        if (key == "base_url")
            config.llm.base_url = value;
        else if (key == "api_key")
            config.llm.api_key = value;
        else if (key == "model")
            config.llm.model = value;
        else if (key == "temperature")
            config.llm.temperature = value.empty() ? std::nullopt : std::optional<double>(to_double(value, where));
        else if (key == "max_output_tokens")
            config.llm.max_output_tokens = to_int(value, where);
        else if (key == "max_retries")
            config.llm.max_retries = to_int(value, where);
        else if (key == "timeout_seconds")
            config.llm.timeout_seconds = to_int(value, where);
        else
            unknown();
    } else if (section == "store") {
        if (key == "root")
            config.store.root = value;
        else if (key == "fixtures")
            config.store.fixtures = value;
        else
            unknown();
    } else if (section == "providers") {
        if (key == "enabled")
            config.enabled_providers = to_list(value);
        else
            unknown();
    } else if (section.rfind("provider.", 0) == 0) {
        config.provider_overrides[section.substr(9)][key] = value;
    } else if (section == "limits") {
        if (key == "max_records")
            config.limits.max_records = to_int(value, where);
        else if (key == "max_in_flight")
            config.limits.max_in_flight = to_int(value, where);
        else
            unknown();
    } else if (section == "pause_policy") {
        if (key == "mode")
            config.pause_policy = parse_pause_policy(value);
        else
            unknown();
    } else if (section == "extraction") {
        if (key == "summary_words")
            config.extraction.summary_words = static_cast<std::size_t>(to_int(value, where));
        else if (key == "chunk_size")
            config.extraction.chunk_size = static_cast<std::size_t>(to_int(value, where));
        else if (key == "chunk_overlap")
            config.extraction.chunk_overlap = static_cast<std::size_t>(to_int(value, where));
        else
            unknown();
    } else if (section == "planner") {
        if (key == "questions")
            config.question_count = to_int(value, where);
        else
            unknown();
    } else if (section == "http") {
        if (key == "addr")
            config.http.addr = value;
        else if (key == "token")
            config.http.token = value;
        else if (key == "contact")
            config.http.contact = value;
        else if (key == "ui_dir")
            config.http.ui_dir = value;
        else
            unknown();
    } else
        throw ValidationError(where + ": unknown section [" + section + "]");
}

} // unnamed namespace


ServiceConfig parse_config(std::string_view text) {
    ServiceConfig config;
    std::string section;
    int line_number = 0;
    for (const auto &raw : split(text, '\n')) {
        ++line_number;
        const auto where = "config line " + std::to_string(line_number);
        const auto line = trim(raw);
        if (line.empty() or line[0] == '#' or line[0] == ';')
            continue;
        if (line.front() == '[') {
            if (line.back() != ']' or line.size() < 3)
                throw ValidationError(where + ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section != "llm" and section != "store" and section != "providers" and section != "limits"
                and section != "pause_policy" and section != "extraction" and section != "planner" and section != "http"
                and not(section.rfind("provider.", 0) == 0 and section.size() > 9))
                throw ValidationError(where + ": unknown section [" + section + "]");
            continue;
        }
        const auto equals = line.find('=');
        if (equals == std::string::npos)
            throw ValidationError(where + ": expected key = value");
        if (section.empty())
            throw ValidationError(where + ": key outside of a section");
        set_key(config, section, trim(line.substr(0, equals)), trim(line.substr(equals + 1)), where);
    }
    if (config.limits.max_records < 1)
        throw ValidationError("limits.max_records must be >= 1");
    if (config.limits.max_in_flight < 1)
        throw ValidationError("limits.max_in_flight must be >= 1");
    if (config.llm.max_retries < 0)
        throw ValidationError("llm.max_retries must be >= 0");
    return config;
}


ServiceConfig load_config(const std::filesystem::path &path) {
    std::string text;
    try {
        text = fs_util::read_file(path);
    } catch (const std::exception &) {
        throw ValidationError("cannot read config file " + path.string());
    }
    return parse_config(text);
}


void apply_environment(ServiceConfig &config) {
    auto read = [](const char *name) -> std::optional<std::string> {
        const char *value = std::getenv(name);
        if (value == nullptr or *value == '\0')
            return std::nullopt;
        return std::string(value);
    };
    if (auto value = read("SLR_LLM_BASE_URL"))
        config.llm.base_url = *value;
    if (auto value = read("SLR_LLM_API_KEY"))
        config.llm.api_key = *value;
    if (auto value = read("SLR_LLM_MODEL"))
        config.llm.model = *value;
    if (auto value = read("SLR_HTTP_TOKEN"))
        config.http.token = *value;
}


ProviderDescriptor descriptor_from_json(const json &j) {
    ProviderDescriptor provider;
    try {
        provider.tag = j.at("tag").get<std::string>();
        provider.base_url = j.at("base_url").get<std::string>();
        provider.transport = j.value("transport", provider.transport);
        provider.dialect = parse_dialect(j.value("dialect", std::string(to_string(provider.dialect))));
        provider.page_size = j.value("page_size", provider.page_size);
        provider.rate_limit = j.value("rate_limit", provider.rate_limit);
        provider.query_param = j.value("query_param", provider.query_param);
        provider.page_size_param = j.value("page_size_param", provider.page_size_param);
        provider.year_from_param = j.value("year_from_param", provider.year_from_param);
        provider.year_from_format = j.value("year_from_format", provider.year_from_format);
        provider.year_to_param = j.value("year_to_param", provider.year_to_param);
        provider.year_to_format = j.value("year_to_format", provider.year_to_format);
        provider.language_param = j.value("language_param", provider.language_param);
        provider.language_format = j.value("language_format", provider.language_format);
        for (const auto &[name, value] : j.value("static_params", json::object()).items())
            provider.static_params.emplace_back(name, value.get<std::string>());
        provider.cursor_param = j.value("cursor_param", provider.cursor_param);
        provider.initial_cursor = j.value("initial_cursor", provider.initial_cursor);
        provider.next_cursor_path = j.value("next_cursor_path", provider.next_cursor_path);
        provider.items_path = j.value("items_path", provider.items_path);
        for (const auto &[field, mapping] : j.at("fields").items()) {
            if (mapping.is_string())
                provider.fields[field] = { mapping.get<std::string>(), {} };
            else
                provider.fields[field] = { mapping.at("path").get<std::string>(),
                                           mapping.value("concat", std::vector<std::string>{}) };
        }
    } catch (const json::exception &error) {
        throw ValidationError(std::string("malformed provider descriptor: ") + error.what());
    }
    validate(provider);
    return provider;
}


std::vector<ProviderDescriptor> resolve_providers(const ServiceConfig &config) {
    std::vector<ProviderDescriptor> providers;
    std::set<std::string> seen;
    for (const auto &tag : config.enabled_providers) {
        if (not seen.insert(tag).second)
            throw ValidationError("provider " + tag + " is enabled twice");
        const auto overrides = config.provider_overrides.find(tag);
        std::optional<ProviderDescriptor> provider;
        if (overrides != config.provider_overrides.end() and overrides->second.contains("descriptor")) {
            json document;
            try {
                document = json::parse(fs_util::read_file(overrides->second.at("descriptor")));
            } catch (const std::exception &error) {
                throw ValidationError("provider " + tag + ": cannot load descriptor: " + error.what());
            }
            document["tag"] = tag;
            provider = descriptor_from_json(document);
        } else
            provider = find_builtin_provider(tag);
        if (not provider)
            throw ValidationError("unknown provider \"" + tag + "\"; define it with [provider." + tag + "] descriptor = FILE");
        if (provider->tag == "fixture")
            provider->base_url = (config.store.fixtures / "providers").string();

        if (overrides != config.provider_overrides.end()) {
            for (const auto &[key, value] : overrides->second) {
                const auto where = "[provider." + tag + "] " + key;
                if (key == "descriptor")
                    continue;
                if (key == "base_url")
                    provider->base_url = value;
                else if (key == "page_size")
                    provider->page_size = to_int(value, where);
                else if (key == "rate_limit")
                    provider->rate_limit = to_double(value, where);
                else if (key == "dialect")
                    provider->dialect = parse_dialect(value);
                else if (key == "transport")
                    provider->transport = value;
                else if (key.rfind("param.", 0) == 0)
                    provider->static_params.emplace_back(key.substr(6), value);
                else
                    throw ValidationError(where + ": unknown provider setting");
            }
        }
        validate(*provider);
        providers.push_back(std::move(*provider));
    }
    if (providers.empty())
        throw ValidationError("no retrieval providers enabled");
    return providers;
}


std::string user_agent(const ServiceConfig &config) {
    std::string agent = "slr-pipeline/0.1";
    if (not config.http.contact.empty())
        agent += " (mailto:" + config.http.contact + ")";
    return agent;
}

} // namespace slr
