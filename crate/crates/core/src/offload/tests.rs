use std::sync::Arc;

use super::*;
use crate::security::SecurityEngine;
use crate::sim::{Federation, ProviderDescriptor};
use crate::wrappers::engine::EngineHost;
use crate::wrappers::{TxnAction, TxnControl, UniformQuery};

async fn apis(capacity: u32) -> Arc<OffloadingApis> {
    let fed = Arc::new(
        Federation::new(vec![
            ProviderDescriptor::new("EU-1", "EU", capacity).with_latency("EU", 5.0),
            ProviderDescriptor::new("EU-2", "EU", capacity).with_latency("EU", 9.0),
        ])
        .unwrap(),
    );
    let a = Arc::new(OffloadingApis::new(
        fed,
        Arc::new(SecurityEngine::new()),
        Arc::new(EngineHost::new()),
        OffloadConfig { q_high: 4, ..OffloadConfig::default() },
    ));
    a.register_local_wrappers().await.unwrap();
    a
}

async fn fill(a: &OffloadingApis, c: &CollectionRef, n: usize) {
    for i in 0..n {
        let q = UniformQuery::write(&c.store_id, &c.collection, &format!("k{i:03}"), format!("v{i}"));
        a.dispatch(q).await.unwrap().into_result().unwrap();
    }
}

async fn read(a: &OffloadingApis, c: &CollectionRef, key: &str) -> Result<Vec<u8>> {
    let r = a.dispatch(UniformQuery::read(&c.store_id, &c.collection, key)).await?.into_result()?;
    Ok(r.payload.unwrap_or_default())
}

#[tokio::test]
async fn lifecycle_accounts_for_machines() {
    let a = apis(4).await;
    let s = a.create_store(StoreKind::KeyValue, "EU-1", 2, Some("s".into())).await.unwrap();
    assert_eq!(a.federation().capacity("EU-1").unwrap().free, 2);
    assert!(matches!(
        a.create_store(StoreKind::KeyValue, "EU-1", 1, Some("s".into())).await,
        Err(Error::DuplicateId(_))
    ));
    assert!(matches!(
        a.create_store(StoreKind::Tabular, "EU-1", 3, None).await,
        Err(Error::CapacityExceeded(_))
    ));
    let scaled = a.scale_store(&s.store_id, &[MachineDescriptor::on("EU-2")]).await.unwrap();
    assert_eq!(scaled.instances.len(), 3);
    let released = a.release_instances(&s.store_id, 1).await.unwrap();
    assert_eq!(released.instances.len(), 2);
    assert_eq!(a.federation().capacity("EU-2").unwrap().free, 4);
    a.destroy_store(&s.store_id).await.unwrap();
    assert_eq!(a.federation().capacity("EU-1").unwrap().free, 4);
    assert!(matches!(a.store("s"), Err(Error::StoreNotFound(_))));
}

#[tokio::test]
async fn migration_verifies_then_cuts_over() {
    let a = apis(8).await;
    a.create_store(StoreKind::KeyValue, "EU-1", 1, Some("src".into())).await.unwrap();
    a.create_store(StoreKind::Document, "EU-2", 1, Some("dst".into())).await.unwrap();
    let src = CollectionRef::new("src", "c");
    let dst = CollectionRef::new("dst", "c");
    fill(&a, &src, 20).await;
    let before = a.digest_set(&src).await.unwrap();
    let report = a.migrate(&src, &dst).await.unwrap();
    assert_eq!(report.records_moved, 20);
    assert_eq!(a.digest_set(&dst).await.unwrap(), before);
    assert!(a.digest_set(&src).await.unwrap().is_empty());
    // Readers of the old location follow the cutover.
    assert_eq!(a.resolve(&src), dst);
    assert_eq!(read(&a, &src, "k007").await.unwrap(), b"v7");
}

#[tokio::test]
async fn corrupted_copy_fails_verification_and_keeps_the_source() {
    let a = apis(8).await;
    a.create_store(StoreKind::KeyValue, "EU-1", 1, Some("src".into())).await.unwrap();
    a.create_store(StoreKind::Tabular, "EU-2", 1, Some("dst".into())).await.unwrap();
    let src = CollectionRef::new("src", "c");
    fill(&a, &src, 10).await;
    let before = a.digest_set(&src).await.unwrap();
    a.set_copy_fault(Some(Arc::new(|key: &str, v: &mut Vec<u8>| {
        if key == "k004" {
            v.push(b'!');
        }
    })));
    let err = a.migrate(&src, &CollectionRef::new("dst", "c")).await.unwrap_err();
    assert!(matches!(err, Error::VerificationFailed(_)), "{err:?}");
    assert_eq!(a.digest_set(&src).await.unwrap(), before);
    assert_eq!(a.resolve(&src), src);
}

#[tokio::test]
async fn continuous_replica_converges_after_sync() {
    let a = apis(8).await;
    a.create_store(StoreKind::Document, "EU-1", 1, Some("p".into())).await.unwrap();
    a.create_store(StoreKind::KeyValue, "EU-2", 1, Some("r".into())).await.unwrap();
    let src = CollectionRef::new("p", "c");
    let dst = CollectionRef::new("r", "c");
    fill(&a, &src, 5).await;
    let link = a.replicate(&src, &dst, ReplicationMode::Continuous).await.unwrap();
    fill(&a, &src, 12).await;
    a.dispatch(UniformQuery::delete("p", "c", "k001")).await.unwrap().into_result().unwrap();
    assert!(matches!(a.replicate(&src, &dst, ReplicationMode::Continuous).await, Err(Error::LinkExists(_))));
    for _ in 0..5 {
        a.sync_cycle().await.unwrap();
    }
    assert_eq!(a.digest_set(&dst).await.unwrap(), a.digest_set(&src).await.unwrap());
    a.remove_link(&link.link_id).unwrap();
    assert!(a.links().is_empty());
}

#[tokio::test]
async fn offload_prefers_a_replica_then_scaling_then_gives_up() {
    let a = apis(2).await;
    a.create_store(StoreKind::KeyValue, "EU-1", 1, Some("hot".into())).await.unwrap();
    assert!(matches!(a.offload("hot", Some(1)).await, Err(Error::NoBottleneck(_))));

    let plan = a.offload("hot", Some(10)).await.unwrap();
    assert!(matches!(plan.action, OffloadAction::Scale { ref provider_id, .. } if provider_id == "EU-1"));
    let plan = a.offload("hot", Some(10)).await.unwrap();
    assert!(matches!(plan.action, OffloadAction::Scale { ref provider_id, .. } if provider_id == "EU-2"));
    a.offload("hot", Some(10)).await.unwrap();
    assert!(matches!(a.offload("hot", Some(10)).await, Err(Error::NoRemedy(_))));

    a.create_store(StoreKind::Document, "EU-2", 1, Some("cold".into())).await.unwrap_err();
    a.release_instances("hot", 1).await.unwrap();
    a.create_store(StoreKind::Document, "EU-2", 1, Some("cold".into())).await.unwrap();
    let src = CollectionRef::new("hot", "c");
    fill(&a, &src, 3).await;
    a.replicate(&src, &CollectionRef::new("cold", "c"), ReplicationMode::Continuous).await.unwrap();
    let plan = a.offload("hot", Some(10)).await.unwrap();
    assert!(matches!(plan.action, OffloadAction::Redirect { .. }));
    assert_eq!(a.plans().len(), 4);
}

#[tokio::test]
async fn transactions_only_on_transactional_kinds() {
    let a = apis(8).await;
    a.create_store(StoreKind::KeyValue, "EU-1", 1, Some("kv".into())).await.unwrap();
    a.create_store(StoreKind::Tabular, "EU-1", 1, Some("tab".into())).await.unwrap();
    let begin = TxnControl { action: TxnAction::Begin, txn_id: None };
    assert!(matches!(a.dispatch_txn("kv", begin.clone()).await, Err(Error::CapabilityMissing(_))));
    let r = a.dispatch_txn("tab", begin).await.unwrap();
    assert!(r.ok, "{r:?}");
}
