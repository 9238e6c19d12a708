//! Shared fixtures for the benchmarks: a synthetic site taken through every
//! stage up to the filter inputs.

use oifuse::pipeline::{fit_fusion, target_inputs, ObservationSettings, SiteData};
use oifuse::{
    build_climatology, generate_site, Climatology, ClimatologyOptions, FusionModels, FusionOptions,
    ObservationModel, PixelArchive, PixelId, PixelInputs, SyntheticConfig,
};

pub struct Fixture {
    pub data: SiteData,
    pub years: (i32, i32),
    pub archive: PixelArchive,
    pub climatology: Climatology,
    pub fusion: FusionModels,
    pub inputs: Vec<PixelInputs>,
    pub obs: ObservationModel,
}

impl Fixture {
    /// A `side`×`side` site with default noise and gaps; inputs are for B4.
    pub fn new(side: usize) -> Self {
        let config = SyntheticConfig {
            width: side,
            height: side,
            ..SyntheticConfig::default()
        };
        let site = generate_site(&config).expect("synthetic site");
        let data = SiteData::from_synthetic(&site).expect("site data");
        let years = (config.first_year, config.target_year() - 1);
        let archive = data.archive(years).expect("archive");
        let climatology =
            build_climatology(&archive, &ClimatologyOptions::default()).expect("climatology");
        let fusion = fit_fusion(&data, years, &FusionOptions::default()).expect("fusion");
        let obs = ObservationSettings::default()
            .resolve(&archive, &climatology)
            .expect("observation model")
            .remove("B4")
            .expect("band B4");
        let pixels: Vec<PixelId> = (0..(side * side) as PixelId).collect();
        let inputs = target_inputs(
            &data,
            &climatology,
            &fusion,
            "B4",
            config.target_year(),
            &pixels,
        )
        .expect("inputs");
        Self {
            data,
            years,
            archive,
            climatology,
            fusion,
            inputs,
            obs,
        }
    }
}
