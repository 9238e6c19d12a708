use oifuse::pipeline::{
    fit_fusion, run_filter, skill, target_inputs, ObservationSettings, SiteData,
};
use oifuse::{
    build_climatology, generate_site, ClimatologyOptions, FusionOptions, PixelId, SyntheticConfig,
};

#[test]
fn default_site_filter_beats_priors_and_raw_observations() {
    let config = SyntheticConfig::default();
    let site = generate_site(&config).unwrap();
    let data = SiteData::from_synthetic(&site).unwrap();
    let years = (config.first_year, config.target_year() - 1);
    let archive = data.archive(years).unwrap();
    let clim = build_climatology(&archive, &ClimatologyOptions::default()).unwrap();
    let fusion = fit_fusion(&data, years, &FusionOptions::default()).unwrap();
    let models = ObservationSettings::default()
        .resolve(&archive, &clim)
        .unwrap();
    let pixels: Vec<PixelId> = (0..data.fine_geometry.len() as PixelId).collect();

    for band in data.bands() {
        let inputs =
            target_inputs(&data, &clim, &fusion, &band, config.target_year(), &pixels).unwrap();
        let steps = run_filter(&inputs, &models[&band]).unwrap();
        let s = skill(&inputs, &steps, &site.truth).unwrap();
        eprintln!("{s:?} r={}", models[&band].r());
        assert!(s.filtered_rmse < s.climatology_rmse);
        assert!(s.filtered_rmse < s.fusion_rmse);
        assert!(s.filtered_rmse_observed < s.raw_rmse_observed);
        assert!(s.filtered_rmse_gaps < s.climatology_rmse_gaps);
        assert!(s.n_gaps > 0);
    }
}

/// Masked months keep their prior variance; whenever that prior is at least
/// as wide as an observed neighbour's prior, the masked month ends up with
/// strictly more variance. (Unconditionally this can fail: a masked month
/// whose climatology happens to be tight can beat an observed neighbour.)
#[test]
fn masked_months_keep_prior_variance() {
    let config = SyntheticConfig {
        forced_gap_months: vec![3, 4],
        ..SyntheticConfig::default()
    };
    let site = generate_site(&config).unwrap();
    let data = SiteData::from_synthetic(&site).unwrap();
    let years = (config.first_year, config.target_year() - 1);
    let archive = data.archive(years).unwrap();
    let clim = build_climatology(&archive, &ClimatologyOptions::default()).unwrap();
    let fusion = fit_fusion(&data, years, &FusionOptions::default()).unwrap();
    let models = ObservationSettings::default()
        .resolve(&archive, &clim)
        .unwrap();
    let pixels: Vec<PixelId> = (0..data.fine_geometry.len() as PixelId).collect();
    let mut comparable = 0;
    for band in data.bands() {
        let inputs =
            target_inputs(&data, &clim, &fusion, &band, config.target_year(), &pixels).unwrap();
        let steps = run_filter(&inputs, &models[&band]).unwrap();
        for s in &steps {
            for gap in [2usize, 3] {
                assert!(!s[gap].observed);
                assert_eq!(s[gap].posterior, s[gap].predicted);
                for k in [1usize, 4] {
                    if s[k].observed && s[gap].predicted.variance() >= s[k].predicted.variance() {
                        comparable += 1;
                        assert!(s[gap].posterior.variance() > s[k].posterior.variance());
                    }
                }
            }
        }
    }
    assert!(comparable > 10_000);
}
