use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use partlift::cameras::make_default_views;
use partlift::grouping::{group_instances, GroupingParams};
use partlift::pipeline::{ground_truth_detections, rasterize, PipelineConfig};
use partlift::projection::visibility_map;
use partlift::superpoints::{build_features, build_knn_graph, cut_pursuit};
use partlift::synth::{preset, synth_scene, SynthScene};
use partlift::voting::{superpoint_labels, vote_scores};

fn chair() -> SynthScene {
    synth_scene(&preset("chair", 2000.0, 0).unwrap()).unwrap()
}

fn stages(c: &mut Criterion) {
    let scene = chair();
    let config = PipelineConfig::default();
    let views = make_default_views(&scene.cloud, config.num_views, config.width, config.height);
    let features = build_features(&scene.cloud, config.color_weight);
    let graph = build_knn_graph(scene.cloud.positions(), config.knn);
    let partition = cut_pursuit(&features, &graph, config.rho, config.max_iters);
    let vis = visibility_map(&rasterize(&config, &scene.cloud, &views));
    let dets = ground_truth_detections(&config, &scene.cloud, &scene.labels, &views);
    let c_count = scene.schema.num_categories();
    let scores = vote_scores(&partition, &dets, &vis, c_count, 0.0);
    let labels = superpoint_labels(&scores, 0.0);

    let mut g = c.benchmark_group("chair");
    g.sample_size(10);
    g.bench_function("rasterize_10_views", |b| {
        b.iter(|| rasterize(&config, black_box(&scene.cloud), &views))
    });
    g.bench_function("knn_graph", |b| {
        b.iter(|| build_knn_graph(black_box(scene.cloud.positions()), config.knn))
    });
    g.bench_function("cut_pursuit", |b| {
        b.iter(|| cut_pursuit(black_box(&features), &graph, config.rho, config.max_iters))
    });
    g.bench_function("vote_scores", |b| {
        b.iter(|| vote_scores(black_box(&partition), &dets, &vis, c_count, 0.0))
    });
    g.bench_function("group_instances", |b| {
        b.iter(|| {
            group_instances(
                black_box(&partition),
                &labels,
                &dets,
                &vis,
                &graph,
                &scores,
                GroupingParams::default(),
            )
        })
    });
    g.finish();
}

criterion_group!(benches, stages);
criterion_main!(benches);
