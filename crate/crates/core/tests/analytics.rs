use std::sync::Arc;

use serde_json::json;

use budamaf::analytics::sample::{MonitoringRecord, SampleModule, SampleReport, Window};
use budamaf::gateway::{GatewayConfig, PrincipalRegistry};
use budamaf::offload::CollectionRef;
use budamaf::protocol::{Credentials, JobData, JobKind, JobStatus, Role};
use budamaf::sim::ProviderDescriptor;
use budamaf::Gateway;

fn owner() -> Credentials {
    Credentials::new("ops", "ops-pw")
}

async fn gateway() -> Arc<Gateway> {
    let cfg = GatewayConfig {
        providers: vec![ProviderDescriptor::new("EU-1", "EU", 16)],
        probe_period_ms: 0,
        sync_period_ms: 0,
        ..GatewayConfig::default()
    };
    let reg = PrincipalRegistry::new()
        .with("ops", "ops-pw", &[Role::Application])
        .with("stranger", "stranger-pw", &[Role::Application])
        .with("sec", "sec-pw", &[Role::SecurityAdmin]);
    let gw = Gateway::start(cfg, reg).await.unwrap();
    let v = gw
        .run(&owner(), JobKind::CreateStore, json!({"kind": "document", "provider_id": "EU-1", "store_id": "mon"}), None)
        .await
        .unwrap();
    assert_eq!(v.status, JobStatus::Finished, "{v:?}");
    gw
}

async fn save_monitoring(gw: &Arc<Gateway>) {
    let mut records = Vec::new();
    for (i, store) in ["a", "b", "a", "c", "a", "b"].iter().enumerate() {
        records.push(MonitoringRecord { store_id: (*store).into(), at_ms: 100 * i as u64, queue_depth: i as u64 });
    }
    records.push(MonitoringRecord { store_id: "a".into(), at_ms: 10_000, queue_depth: 99 });
    let d = json!({
        "descriptor": {
            "dataset_id": "mon-day1",
            "description": {"class": "monitoring", "source": "gateway"},
            "locations": [{"store_id": "mon", "collection": "records"}],
        },
        "records": records,
        "metadata": {"data_class": "monitoring"},
    });
    let v = gw.run(&owner(), JobKind::AnalyticsSave, d, None).await.unwrap();
    assert_eq!(v.status, JobStatus::Finished, "{v:?}");
}

#[tokio::test]
async fn sample_module_summarizes_and_saves_a_report() {
    let gw = gateway().await;
    save_monitoring(&gw).await;
    let module = SampleModule::new(gw.clone(), owner(), CollectionRef::new("mon", "reports"));
    let report = module.run(Window { from_ms: 0, to_ms: 1000 }).await.unwrap();
    assert_eq!(report.stores["a"].requests, 3);
    assert_eq!(report.stores["b"].requests, 2);
    assert_eq!(report.stores["c"].requests, 1);
    assert_eq!(report.stores["a"].mean_queue_depth, 2.0);

    let v = gw.run(&owner(), JobKind::AnalyticsRetrieve, json!({"description": {"kind": "sample_report"}}), None).await.unwrap();
    let Some(JobData::Records { records }) = v.data else { panic!("{v:?}") };
    assert_eq!(records.len(), 1);
    let back: SampleReport = serde_json::from_slice(&records[0]).unwrap();
    assert_eq!(back, report);
}

#[tokio::test]
async fn retrieval_fails_closed_without_a_read_grant() {
    let gw = gateway().await;
    save_monitoring(&gw).await;
    let stranger = Credentials::new("stranger", "stranger-pw");
    let d = json!({"description": {"class": "monitoring"}});
    let v = gw.run(&stranger, JobKind::AnalyticsRetrieve, d.clone(), None).await.unwrap();
    assert_eq!(v.status, JobStatus::Crashed);
    assert!(matches!(v.data, Some(JobData::Error { ref code, .. }) if code == "AccessDenied"), "{v:?}");

    let grant = json!({"grants": [{"dataset_id": "mon-day1", "action": "read", "principals": ["stranger"]}]});
    let v = gw.run(&Credentials::new("sec", "sec-pw"), JobKind::PolicyUpdate, grant, None).await.unwrap();
    assert_eq!(v.status, JobStatus::Finished, "{v:?}");
    let v = gw.run(&stranger, JobKind::AnalyticsRetrieve, d, None).await.unwrap();
    let Some(JobData::Records { records }) = v.data else { panic!("{v:?}") };
    assert_eq!(records.len(), 7);
}

#[tokio::test]
async fn unmatched_filter_returns_nothing() {
    let gw = gateway().await;
    save_monitoring(&gw).await;
    let v = gw.run(&owner(), JobKind::AnalyticsRetrieve, json!({"description": {"class": "none"}}), None).await.unwrap();
    assert_eq!(v.status, JobStatus::Finished);
    assert!(matches!(v.data, Some(JobData::Records { ref records }) if records.is_empty()), "{v:?}");
}
