# Core library: graph, models, data, engine, analysis, storage
